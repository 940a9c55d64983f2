# %% [markdown]
# # From scores to segments
#
# Inference in four steps: keep classes whose video-level score clears 0.2,
# threshold action-ness at 16 levels, score every (segment, class) by
# outer-inner contrast, then suppress near-duplicates per class.  We train a
# quick model, open up one test video and follow a proposal through.

# %%
import numpy as np

from jcdnet import InferenceConfig, SynthConfig, forward, synth_generate, synthetic_run_config, train
from jcdnet import autograd as ag
from jcdnet.data import Dataset
from jcdnet.evaluation import map_report, tiou
from jcdnet.inference import generate_segments, localize, nms, select_classes, video_class_scores

# %%
ds = synth_generate(SynthConfig()).dataset
train_set = Dataset(ds.classes, ds.videos[:150], ds.conjoint_sets)
cfg = synthetic_run_config()
trained = train(train_set, cfg)
video = ds.videos[170]
with ag.no_grad():
    out = forward(ag.Tensor(video.features), trained.model_config, trained.params, mode="eval")

# %% [markdown]
# Video-level class scores.  These are a softmax over pooled probabilities,
# so they stay fairly flat; the filter mainly drops clearly absent classes.

# %%
k = max(1, video.features.shape[0] // cfg.inference.topk_divisor)
print("p:", np.round(video_class_scores(out.s_final_supp, k), 3), "(last = background)")
print("kept classes:", [ds.classes[c] for c in select_classes(out.s_final_supp, k)],
      "| truth:", ds.classes[video.classes[0]])

# %% [markdown]
# Action-ness against the ground truth, one character per snippet.

# %%
a = out.a_ness.data
print("".join(" .:-=+*#%@"[min(9, int(v * 10))] for v in a))
truth = np.zeros(len(a), bool)
for g in video.segments:
    truth[round(g.t_start * 25 / 16):round(g.t_end * 25 / 16)] = True
print("".join("^" if t else " " for t in truth))

# %% [markdown]
# Candidate segments pile up across thresholds; NMS at IoU 0.7 thins them.

# %%
cands = generate_segments(a, InferenceConfig().actionness_thresholds)
print(f"{len(cands)} candidates, {len(set(cands))} distinct")
props = localize(out, cfg.inference, video.video_id, fps=video.fps)
for p in props[:5]:
    best = max(tiou((p.t_start, p.t_end), (g.t_start, g.t_end)) for g in video.segments)
    print(f"{ds.classes[p.class_id]:>8} [{p.t_start:5.2f}, {p.t_end:5.2f}] psi={p.psi:.3f} best tIoU={best:.2f}")
per_class = [[p for p in props if p.class_id == c] for c in sorted({p.class_id for p in props})]
print("re-running NMS changes nothing:", all(nms(group) == group for group in per_class))

# %% [markdown]
# The same proposals scored with the standard metric.

# %%
report = map_report(props, video.segments, class_names=ds.classes)
print(report.format_table())
