"""Train the classifier on a small synthetic corpus and score it.

Generates the two-class corpus (100 Hz tone bursts vs near-silence),
trains the depthwise-conv model for a few hundred SGD steps, and prints
the evaluation report with a merged-class view.
"""

import json
import tempfile

from parablude import nn
from parablude.corpus import generate_corpus, two_class_spec
from parablude.dsp import FeatureConfig
from parablude.evaluate import ReportMetadata, confusion, report
from parablude.train import (
    LabelSet,
    TrainConfig,
    featurize_manifest,
    manifest_from_rows,
    split_dataset,
    train_model,
)

spec = two_class_spec()
with tempfile.TemporaryDirectory() as tmp:
    rows = generate_corpus(spec, tmp, seed=11)
    label_set = LabelSet(classes=tuple(spec.labels), background=spec.background)
    manifest = manifest_from_rows(rows, label_set, base_dir=tmp)
    print(f"corpus: {len(rows)} clips, classes {label_set.classes}")

    config = TrainConfig(schedule=((300, 0.001),), batch_size=8, seed=2,
                         eval_interval=100)
    front_end = FeatureConfig()  # 252 Hz low-pass on, as for plain hits
    train_m, val_m, test_m = split_dataset(manifest, config.split, config.seed)
    print(f"split: {len(train_m.entries)} train / {len(val_m.entries)} val / "
          f"{len(test_m.entries)} test")

    params, history = train_model(train_m, val_m, front_end, config)
    for record in history:
        print(f"  step {record.step:4d}  lr {record.lr:.4f}  "
              f"loss {record.train_loss:.4f}  val acc {record.val_accuracy:.2f}")

    x, y = featurize_manifest(test_m, front_end)
    preds = nn.predict_proba(x, params).argmax(axis=1)
    cm = confusion(preds, y, label_set.classes)
    doc = report(cm, metadata=ReportMetadata(seed=config.seed, split="test"),
                 merge={"tone": "impact", "silence": "silence"})
    print("\nreport:")
    print(json.dumps(doc["raw"], indent=2, sort_keys=True))
    print("merged mapping:", doc["merged"]["mapping"])
