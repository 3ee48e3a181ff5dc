"""Small trainable heads: cross-session predictor, contrastive projector,
and expandable linear classifier heads."""

import torch
import torch.nn as nn
import torch.nn.functional as F


class Predictor(nn.Module):
    """Two-layer perceptron mapping an embedding into the previous session's
    space; output re-normalized (zero inputs map to the zero vector)."""

    def __init__(self, dim):
        super().__init__()
        self.fc1 = nn.Linear(dim, dim)
        self.fc2 = nn.Linear(dim, dim)

    def forward(self, z):
        return F.normalize(self.fc2(F.relu(self.fc1(z))), dim=-1, eps=1e-12)


class ProjectionHead(nn.Module):
    """SimCLR-style 2-layer projector applied before the contrastive loss."""

    def __init__(self, dim):
        super().__init__()
        self.fc1 = nn.Linear(dim, dim)
        self.fc2 = nn.Linear(dim, dim)

    def forward(self, z):
        return F.normalize(self.fc2(F.relu(self.fc1(z))), dim=-1, eps=1e-12)


class ClassifierHead(nn.Module):
    """Linear head over a fixed-dimension feature, grown as classes arrive.

    Rows are indexed by position in `class_ids`; old rows keep their weights
    when new classes are appended.
    """

    def __init__(self, dim, class_ids, generator=None):
        super().__init__()
        self.dim = dim
        self.class_ids = list(class_ids)
        self.fc = nn.Linear(dim, len(self.class_ids))
        if generator is not None:
            self._reinit(self.fc, generator)

    @staticmethod
    def _reinit(linear, generator):
        with torch.no_grad():
            bound = 1.0 / linear.in_features**0.5
            linear.weight.uniform_(-bound, bound, generator=generator)
            linear.bias.uniform_(-bound, bound, generator=generator)

    def expand(self, new_class_ids, generator=None):
        new_class_ids = [c for c in new_class_ids if c not in self.class_ids]
        if not new_class_ids:
            return self
        fresh = nn.Linear(self.dim, len(new_class_ids))
        if generator is not None:
            self._reinit(fresh, generator)
        fc = nn.Linear(self.dim, len(self.class_ids) + len(new_class_ids))
        with torch.no_grad():
            fc.weight[: len(self.class_ids)] = self.fc.weight
            fc.bias[: len(self.class_ids)] = self.fc.bias
            fc.weight[len(self.class_ids) :] = fresh.weight
            fc.bias[len(self.class_ids) :] = fresh.bias
        fc = fc.to(self.fc.weight.dtype)
        self.fc = fc
        self.class_ids.extend(new_class_ids)
        return self

    def forward(self, z):
        return self.fc(z)

    def target_index(self, labels):
        """Map raw class ids to row positions of this head."""
        lookup = {c: i for i, c in enumerate(self.class_ids)}
        return torch.tensor([lookup[int(l)] for l in labels], dtype=torch.long)
