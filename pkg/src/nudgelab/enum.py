"""Case-insensitive string enums for config values and CLI choices.
"""

import enum


def _normalize(value: str) -> str:
    return value.strip().lower().replace("_", "-")


class CiStrEnum(enum.StrEnum):
    """Gets the enum member by case-insensitive string value.

    Lookup also treats ``_`` and ``-`` as the same character, so config
    files may spell ``h1_baseline``, ``H1-Baseline`` or ``h1-baseline``
    for the same member.  Member values are the canonical lower-case,
    hyphenated spellings.
    """

    @classmethod
    def _missing_(cls, value):
        if not isinstance(value, str):
            return None
        wanted = _normalize(value)
        for member in cls:
            if _normalize(member.value) == wanted or _normalize(member.name) == wanted:
                return member
        return None

    @classmethod
    def choices(cls) -> list[str]:
        """Canonical values, in definition order."""
        return [member.value for member in cls]

    def __str__(self):
        return self.value
