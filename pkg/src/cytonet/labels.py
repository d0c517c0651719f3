"""The five cervical cell categories, in label-id order."""

CLASS_NAMES = (
    "Superficial-Intermediate",
    "Parabasal",
    "Koilocytotic",
    "Dyskaryotic",
    "Metaplastic",
)

NUM_CLASSES = len(CLASS_NAMES)
