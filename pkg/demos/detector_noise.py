"""How detector quality feeds into search accuracy.

Trains one two-stream model, then evaluates it with simulated detections of
decreasing quality.

    python demos/detector_noise.py
"""

from dataclasses import replace

from mgts import pipeline
from mgts.config import RunConfig
from mgts.detectsim import DetectorNoiseCfg

rc = RunConfig()
dataset = pipeline.build_dataset(rc)
model = pipeline.train_model(rc, dataset).model
size = rc.eval.gallery_sizes[0]

print("jitter  miss  det-AP  recall  search mAP")
for jitter, miss in [(0.0, 0.0), (0.05, 0.1), (0.1, 0.2), (0.2, 0.3)]:
    noisy = replace(rc, detector=DetectorNoiseCfg(jitter_sigma=jitter, miss_rate=miss, false_positive_rate=0.3),
                    eval=replace(rc.eval, use_detector=True))
    r = pipeline.evaluate_sizes(noisy, model, dataset, [size])[size]
    print(f"{jitter:6.2f} {miss:5.2f} {r.detection_ap:7.3f} {r.detection_recall:7.3f} {r.search_map:11.3f}")
