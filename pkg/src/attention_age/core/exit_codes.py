"""Process exit codes for the attention-age CLI."""

SUCCESS = 0
ERR_RUNTIME = 1
ERR_USAGE = 2
ERR_CONFIG = 3
ERR_CHECKPOINT = 4
ERR_LOCKED = 5
ERR_DATA = 6

CODE_NAMES = {
    SUCCESS: "ok",
    ERR_RUNTIME: "runtime",
    ERR_USAGE: "usage",
    ERR_CONFIG: "config",
    ERR_CHECKPOINT: "checkpoint",
    ERR_LOCKED: "locked",
    ERR_DATA: "data",
}
