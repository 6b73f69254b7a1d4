from .const import CHECKPOINT_FORMAT_VERSION

name = "crossview"

__all__ = ["core", "synthdata", "encoder", "interaction", "crossdomain", "trainer", "evaluator", "cli"]
