from pathlib import Path

CONFIG_FILE_PATH = Path("config/config.yaml")
PARAMS_FILE_PATH = Path("params.yaml")
SCHEMA_FILE_PATH = Path("schema.yaml")

DATASET_MAGIC = "cfsfl-data"
SPLIT_MAGIC = "cfsfl-split"
DATASET_VERSION = "v1"

CHECKPOINT_MAGIC = b"CFSF"
CHECKPOINT_VERSION = 1
DTYPE_FLOAT32 = 0

TRAIN_FILE = "train.data"
VALIDATION_FILE = "validation.split"
TEST_FILE = "test.split"
ITEMS_FILE = "items.csv"
USERS_FILE = "users.csv"
SUMMARY_FILE = "summary.json"

TRAIN_METRICS_COLUMNS = ["stage", "epoch", "metric", "value"]
EVAL_METRICS_COLUMNS = ["split", "metric", "k", "T", "value", "n_users"]

# owner tags of trainable tensors
THETA = "theta"
PHI = "phi"
PSI = "psi"
FUSION = "fusion"
OWNERS = (THETA, PHI, PSI, FUSION)

EXIT_OK = 0
EXIT_IO = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

THREADS_ENV = "CFSFL_THREADS"

# printf format for floats in metrics CSVs
CSV_FLOAT_FORMAT = "%.10g"
