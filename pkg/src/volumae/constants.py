METRICS_FILE = "metrics.csv"
METRICS_HEADER = (
    "step",
    "loss_total",
    "loss_chamfer",
    "loss_occ",
    "loss_img",
    "lr",
    "grad_norm",
)
RUN_LOGS_FILE = "logs.jsonl"
CHECKPOINT_ARRAYS_FILE = "checkpoint.npz"
CHECKPOINT_META_FILE = "checkpoint.json"
SUMMARY_FILE = "summary.json"
RECONSTRUCTION_DIR = "recon"
ABLATION_FILE = "ablation.json"
SCENE_FILE_PATTERN = "scene_{seed}.json"
MANUAL_RUN_ID = "_manual"
