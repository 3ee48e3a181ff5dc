"""Incremental session schedules: disjoint class sets with per-class budgets."""

from dataclasses import dataclass, field

from ..errors import DomainError

# Default per-class training budgets, keyed by (dataset_family, mode).
TRAIN_COUNTS = {
    ("tep", "imbalanced"): {"normal": 500, "fault": 48},
    ("tep", "long-tailed"): {"normal": 500, "fault": 20},
    ("mff", "imbalanced"): {"normal": 200, "fault": 10},
    ("mff", "long-tailed"): {"normal": 200, "fault": 5},
}
DEFAULT_TEST_PER_CLASS = 800

MODES = ("imbalanced", "long-tailed")


@dataclass(frozen=True)
class SessionSpec:
    classes: tuple  # class ids introduced in this session
    train_counts: dict  # class id -> training sample budget


@dataclass
class SessionSchedule:
    sessions: list  # list[SessionSpec]
    test_per_class: int
    mode: str
    normal_class: int = None

    def __post_init__(self):
        seen = set()
        for spec in self.sessions:
            overlap = seen.intersection(spec.classes)
            if overlap:
                raise DomainError(f"class ids {sorted(overlap)} appear in more than one session")
            seen.update(spec.classes)
        if self.mode not in MODES:
            raise DomainError(f"mode must be one of {MODES}, got {self.mode!r}")

    @property
    def n_sessions(self):
        return len(self.sessions)

    def cumulative_classes(self, session_index):
        """Union of class sets from session 0 through session_index, sorted."""
        out = []
        for spec in self.sessions[: session_index + 1]:
            out.extend(spec.classes)
        return sorted(out)

    def all_classes(self):
        return self.cumulative_classes(self.n_sessions - 1)

    def to_dict(self):
        return {
            "mode": self.mode,
            "test_per_class": self.test_per_class,
            "normal_class": self.normal_class,
            "sessions": [
                {"classes": list(s.classes), "train_counts": {str(k): v for k, v in s.train_counts.items()}}
                for s in self.sessions
            ],
        }

    @classmethod
    def from_dict(cls, d):
        sessions = [
            SessionSpec(classes=tuple(s["classes"]), train_counts={int(k): v for k, v in s["train_counts"].items()})
            for s in d["sessions"]
        ]
        return cls(
            sessions=sessions,
            test_per_class=d["test_per_class"],
            mode=d["mode"],
            normal_class=d.get("normal_class"),
        )


def build_schedule(
    class_ids,
    split_sizes,
    mode="imbalanced",
    dataset_family="tep",
    normal_class=None,
    normal_count=None,
    fault_count=None,
    test_per_class=None,
):
    """Partition class_ids into sessions of the given sizes with per-mode budgets.

    The first class id is treated as the normal (data-rich) class unless
    ``normal_class`` says otherwise; every other class gets the fault budget.
    Explicit counts override the dataset-family defaults.
    """
    class_ids = list(class_ids)
    if len(set(class_ids)) != len(class_ids):
        raise DomainError("class_ids contain duplicates")
    if sum(split_sizes) != len(class_ids):
        raise DomainError(f"split_sizes sum to {sum(split_sizes)} but there are {len(class_ids)} classes")
    if any(s < 1 for s in split_sizes):
        raise DomainError("every session must introduce at least one class")
    if mode not in MODES:
        raise DomainError(f"mode must be one of {MODES}, got {mode!r}")

    key = (dataset_family, mode)
    if key not in TRAIN_COUNTS and (normal_count is None or fault_count is None):
        raise DomainError(f"unknown dataset family {dataset_family!r}; pass explicit counts")
    defaults = TRAIN_COUNTS.get(key, {})
    normal_count = normal_count if normal_count is not None else defaults["normal"]
    fault_count = fault_count if fault_count is not None else defaults["fault"]
    test_per_class = test_per_class if test_per_class is not None else DEFAULT_TEST_PER_CLASS
    if normal_class is None:
        normal_class = class_ids[0]

    sessions = []
    cursor = 0
    for size in split_sizes:
        chunk = tuple(class_ids[cursor : cursor + size])
        cursor += size
        counts = {c: (normal_count if c == normal_class else fault_count) for c in chunk}
        sessions.append(SessionSpec(classes=chunk, train_counts=counts))
    return SessionSchedule(sessions=sessions, test_per_class=test_per_class, mode=mode, normal_class=normal_class)
