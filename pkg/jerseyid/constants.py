DIGIT_CLASSES = 11  # ten digits plus "absent"
DIGIT_ABSENT = 10
NULL_CLASS_INDEX = 0
PLAYERS_ON_ICE = 6
MAX_GAME_SECONDS = 3600  # the scoreboard clock reads MM:SS up to 59:59
CLOCK_CONFIDENCE_THRESHOLD = 0.8
LOG_CLAMP = 1e-12  # probabilities are floored here before taking the log
FRAME_MAGIC = b"TRKL"
CHECKPOINT_MAGIC = b"JNCK"
METRICS_EVERY = 50  # iterations between metrics rows
