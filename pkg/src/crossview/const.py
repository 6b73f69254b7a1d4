class LabelAttribute:
    # per-sample label file keys
    SAMPLE_ID = "sample_id"
    DOMAIN = "domain"
    CAMERA = "camera"
    OBJECTS = "objects"
    OBJECT_ID = "object_id"
    CENTER = "center"
    DIMS = "dims"
    YAW = "yaw"
    CATEGORY = "category"
    DIFFICULTY = "difficulty"
    BOX2D = "box2d"
    ALBEDO = "albedo"


class CameraAttribute:
    FX = "fx"
    FY = "fy"
    CX = "cx"
    CY = "cy"
    HEIGHT = "height_above_ground"
    PITCH = "pitch"
    IMAGE_SIZE = "image_size"
    POSITION = "position"


class ManifestAttribute:
    ROOT = "root"
    SEED = "seed"
    CONFIG = "config"
    COUNTS = "counts"
    ENTRIES = "entries"
    SAMPLE_ID = "sample_id"
    DOMAIN = "domain"
    SPLIT = "split"
    INDEX = "index"
    IMAGE = "image"
    LABEL = "label"
    DEPTH = "depth"
    CHECKSUMS = "checksums"
    DEPTH_TERCILES = "depth_terciles"


class CheckpointAttribute:
    FORMAT_VERSION = "format_version"
    CONFIG = "config"
    MODELS = "models"
    OPTIMIZER = "optimizer"
    EPOCH = "epoch"
    TORCH_RNG = "torch_rng"


class MetricsAttribute:
    EPOCH = "epoch"
    LOSSES = "losses"
    LR = "lr"
    VAL_AP = "val_ap"
    SKIPPED = "skipped_batches"
    BRANCH_CALLS = "branch_calls"
    IMAGES = "images_per_epoch"
    RATIO = "ratio"


class Split:
    TRAIN = "train"
    VAL = "val"


# file layout
MANIFEST_FILE = "manifest.json"
IMAGES_DIR = "images"
LABELS_DIR = "labels"
DEPTH_DIR = "depth"
CHECKPOINT_FILE = "checkpoint.pt"
METRICS_FILE = "metrics.jsonl"
RESOLVED_CONFIG_FILE = "resolved.cfg"
REPORT_JSON_FILE = "report.json"
REPORT_TABLE_FILE = "report.txt"
SWEEP_CSV_FILE = "sweep.csv"
OUTPUT_ROOT_ENV = "CROSSVIEW_OUTPUT_ROOT"

# checkpoint container
CHECKPOINT_FORMAT_VERSION = "1.1.0"
MIN_CHECKPOINT_VERSION = "1.0.0"

# supervision range for depth labels, meters
DEPTH_MIN = 2.0
DEPTH_MAX = 65.0
BACKGROUND_DEPTH = -1.0

# loss weights lambda_1..lambda_7 (cls, 3d center, edge, giou, dim, ori, depth)
LOSS_WEIGHTS = (2.0, 10.0, 5.0, 2.0, 1.0, 1.0, 1.0)

SCORE_THRESHOLD = 0.2
NUM_QUERIES = 50
RECALL_POSITIONS = 40
IOU_THRESHOLDS = (0.7, 0.5)
FOCAL_GAMMA = 2.0
FOCAL_ALPHA = 0.25

# mean car size (h, w, l) in meters, the prior of the dimension head
CAR_MEAN_DIMS = (1.55, 1.85, 4.3)
