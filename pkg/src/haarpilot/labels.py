from enum import Enum


class GestureLabel(Enum):
    """The five trained gestures plus the void class.

    Declaration order doubles as the arbitration tie-break order.
    """

    FIST = "Fist"
    PALM = "Palm"
    GS = "GS"
    VS = "VS"
    LF = "LF"
    NONE = "None"

    @classmethod
    def parse(cls, token: str) -> "GestureLabel":
        token = token.strip()
        for label in cls:
            if label.value.lower() == token.lower() or label.name.lower() == token.lower():
                return label
        raise ValueError(f"unknown gesture label {token!r}")

    @property
    def rank(self) -> int:
        return list(GestureLabel).index(self)

    def __str__(self):
        return self.value


GESTURES = tuple(label for label in GestureLabel if label is not GestureLabel.NONE)
