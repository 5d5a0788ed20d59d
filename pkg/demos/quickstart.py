"""Generate a small dataset, train the two-stream model, search for every probe.

    python demos/quickstart.py
"""

from dataclasses import replace

from mgts import pipeline
from mgts.config import RunConfig

rc = RunConfig()
rc = replace(rc, train=replace(rc.train, epochs=6))

dataset = pipeline.build_dataset(rc)
print(f"{len(dataset.train)} training scenes, {dataset.num_train_ids} labeled identities, "
      f"{len(dataset.probes)} probes")

trained = pipeline.train_model(rc, dataset)
for epoch, loss in enumerate(trained.log.epoch_loss):
    print(f"epoch {epoch:2d}  OIM loss {loss:.3f}")

# larger galleries hold more distractors, so accuracy drops as they grow
for size, report in pipeline.evaluate_sizes(rc, trained.model, dataset).items():
    print(f"gallery {size:3d}: mAP {report.search_map:.3f}  top-1 {report.top1:.3f}")
