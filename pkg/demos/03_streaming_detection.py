"""Feed a continuous stream into the detector and watch events come out.

Builds a 6 s stream of faint noise with two tone bursts, trains a quick
two-class model, then pushes the stream through the detector in small
chunks the way a sound card would deliver them. Events fire only after
three consecutive confident windows, and the refractory period swallows
re-triggers from the same burst.
"""

import tempfile

import numpy as np

from parablude.corpus import generate_corpus, two_class_spec
from parablude.detect import Detector, DetectorConfig
from parablude.dsp import FeatureConfig
from parablude.train import (
    LabelSet,
    TrainConfig,
    load_checkpoint,
    manifest_from_rows,
    save_checkpoint,
    split_dataset,
    train_model,
)

RATE = 44100

spec = two_class_spec()
with tempfile.TemporaryDirectory() as tmp:
    rows = generate_corpus(spec, tmp, seed=21)
    label_set = LabelSet(classes=tuple(spec.labels), background=spec.background)
    manifest = manifest_from_rows(rows, label_set, base_dir=tmp)
    # one final evaluation keeps the last, sharpest parameters
    config = TrainConfig(schedule=((1500, 0.001),), batch_size=8, seed=2,
                         eval_interval=1500)
    front_end = FeatureConfig()
    train_m, val_m, _ = split_dataset(manifest, config.split, config.seed)
    params, history = train_model(train_m, val_m, front_end, config)
    print(f"trained: val accuracy {history[-1].val_accuracy:.2f}")
    checkpoint = load_checkpoint(save_checkpoint(params, front_end, label_set))

rng = np.random.default_rng(5)
stream = rng.normal(0.0, 0.002, RATE * 6)
for start_s in (1.0, 4.0):
    t = np.arange(int(RATE * 1.3)) / RATE
    lo = int(RATE * start_s)
    stream[lo:lo + t.size] += 0.4 * np.sin(2 * np.pi * 100.0 * t)
stream = np.clip(stream, -1.0, 1.0)
print("stream: 6 s, bursts at 1.0 s and 4.0 s")

detector = Detector(checkpoint, DetectorConfig(refractory_ms=1500.0),
                    pmu_id="pmu-demo")
chunk = 441  # 10 ms of audio per push
for start in range(0, stream.size, chunk):
    for event in detector.push(stream[start:start + chunk]):
        print(f"  event: {event.location!r} at {event.timestamp_ms:7.1f} ms, "
              f"confidence {event.confidence:.3f}")
print(f"windows classified: {detector.inference_count}")
