"""Records, datasets, and the planted-structure synthetic generator.

Users and items carry dense raw feature vectors; interactions are sparse
``(user, item, behavior_type) -> value`` records.  The synthetic generator
plants a latent affinity so that interaction values carry learnable signal:
every behavior type's value is a noisy monotone function of the same
user-item affinity, with a per-type offset making the types correlated but
distinct.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import FileFormatError, InvalidArgumentError

FORMAT_MAGIC = "NANN-DATA v1"


@dataclass
class UserRecord:
    user_id: int
    features: np.ndarray  # shape (d_x,), float64

    def __eq__(self, other):
        if not isinstance(other, UserRecord):
            return NotImplemented
        return self.user_id == other.user_id and np.array_equal(
            self.features, other.features
        )


@dataclass
class ItemRecord:
    item_id: int
    features: np.ndarray  # shape (d_x,), float64

    def __eq__(self, other):
        if not isinstance(other, ItemRecord):
            return NotImplemented
        return self.item_id == other.item_id and np.array_equal(
            self.features, other.features
        )


@dataclass(frozen=True)
class InteractionRecord:
    user_id: int
    item_id: int
    behavior: int  # index in [0, z_dim)
    value: float  # interaction strength, >= 0


@dataclass
class Dataset:
    users: list[UserRecord]
    items: list[ItemRecord]
    interactions: list[InteractionRecord]
    z_dim: int
    _user_index: dict[int, int] = field(default=None, repr=False, compare=False)
    _item_index: dict[int, int] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self._user_index = {u.user_id: i for i, u in enumerate(self.users)}
        self._item_index = {v.item_id: i for i, v in enumerate(self.items)}

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.z_dim == other.z_dim
            and self.users == other.users
            and self.items == other.items
            and self.interactions == other.interactions
        )

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def n_items(self) -> int:
        return len(self.items)

    @property
    def feature_dim(self) -> int:
        return len(self.users[0].features) if self.users else 0

    def user_features(self) -> np.ndarray:
        """All user raw features stacked, row i = users[i]."""
        return np.stack([u.features for u in self.users])

    def item_features(self) -> np.ndarray:
        return np.stack([v.features for v in self.items])

    def interaction_vector(self, user_id: int, item_id: int) -> np.ndarray:
        """Length z_dim vector for one pair; unobserved slots are exactly 0."""
        z = np.zeros(self.z_dim)
        for rec in self.interactions:
            if rec.user_id == user_id and rec.item_id == item_id:
                z[rec.behavior] = rec.value
        return z

    def pair_targets(self) -> tuple[np.ndarray, np.ndarray]:
        """Observed pairs grouped into interaction vectors.

        Returns ``(pairs, targets)`` where ``pairs`` is (n, 2) int64 rows of
        (user row index, item row index) and ``targets`` is (n, z_dim)
        float64, one row per distinct observed (user, item) pair, sorted by
        (user, item).  Behavior slots never observed for a pair stay 0.
        """
        grouped: dict[tuple[int, int], np.ndarray] = {}
        for rec in self.interactions:
            key = (self._user_index[rec.user_id], self._item_index[rec.item_id])
            if key not in grouped:
                grouped[key] = np.zeros(self.z_dim)
            grouped[key][rec.behavior] = rec.value
        keys = sorted(grouped)
        pairs = np.array(keys, dtype=np.int64).reshape(len(keys), 2)
        targets = (
            np.stack([grouped[k] for k in keys])
            if keys
            else np.zeros((0, self.z_dim))
        )
        return pairs, targets

    def validate(self) -> None:
        """Check referential integrity and per-record invariants."""
        d = self.feature_dim
        for u in self.users:
            if len(u.features) != d:
                raise InvalidArgumentError(
                    f"user {u.user_id}: feature dim {len(u.features)} != {d}"
                )
        for v in self.items:
            if len(v.features) != d:
                raise InvalidArgumentError(
                    f"item {v.item_id}: feature dim {len(v.features)} != {d}"
                )
        seen = set()
        for rec in self.interactions:
            if rec.user_id not in self._user_index:
                raise InvalidArgumentError(f"interaction references unknown user {rec.user_id}")
            if rec.item_id not in self._item_index:
                raise InvalidArgumentError(f"interaction references unknown item {rec.item_id}")
            if not 0 <= rec.behavior < self.z_dim:
                raise InvalidArgumentError(
                    f"behavior {rec.behavior} outside [0, {self.z_dim})"
                )
            key = (rec.user_id, rec.item_id, rec.behavior)
            if key in seen:
                raise InvalidArgumentError(f"duplicate interaction record {key}")
            seen.add(key)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def generate_synthetic(
    seed: int,
    n_users: int,
    n_items: int,
    d_x: int,
    z_dim: int,
    density: float,
) -> Dataset:
    """Deterministic synthetic dataset with planted affinity structure.

    Raw features are a fixed random linear mix of low-dimensional latents
    plus small noise, so a linear projector can recover the latent space.
    Candidate interaction values are ``sigmoid(affinity + type offset +
    noise)``; the top ``floor(density * n_users * n_items * z_dim)`` values
    are kept as records (ties broken by candidate order).
    """
    if n_users <= 0 or n_items <= 0 or d_x <= 0 or z_dim <= 0:
        raise InvalidArgumentError("all counts and dims must be positive")
    if not 0 < density <= 1:
        raise InvalidArgumentError(f"density must be in (0, 1], got {density}")

    rng = np.random.default_rng(seed)
    latent_dim = min(8, d_x)

    user_lat = rng.normal(size=(n_users, latent_dim))
    item_lat = rng.normal(size=(n_items, latent_dim))
    mix_u = rng.normal(size=(d_x, latent_dim)) / np.sqrt(latent_dim)
    mix_v = rng.normal(size=(d_x, latent_dim)) / np.sqrt(latent_dim)
    x_u = user_lat @ mix_u.T + 0.05 * rng.normal(size=(n_users, d_x))
    x_v = item_lat @ mix_v.T + 0.05 * rng.normal(size=(n_items, d_x))

    affinity = user_lat @ item_lat.T / np.sqrt(latent_dim)
    type_offsets = 0.5 * rng.normal(size=z_dim)
    values = _sigmoid(
        affinity[None, :, :]
        + type_offsets[:, None, None]
        + 0.25 * rng.normal(size=(z_dim, n_users, n_items))
    )

    n_keep = int(np.floor(density * n_users * n_items * z_dim))
    flat = values.reshape(-1)
    # Stable sort on negated values keeps candidate order on ties.
    order = np.argsort(-flat, kind="stable")[:n_keep]
    order.sort()  # canonical record order: by (behavior, user, item)

    z_idx, rest = np.divmod(order, n_users * n_items)
    u_idx, v_idx = np.divmod(rest, n_items)
    interactions = [
        InteractionRecord(int(u), int(v), int(z), float(flat[o]))
        for z, u, v, o in zip(z_idx, u_idx, v_idx, order)
    ]
    interactions.sort(key=lambda r: (r.user_id, r.item_id, r.behavior))

    users = [UserRecord(i, x_u[i].copy()) for i in range(n_users)]
    items = [ItemRecord(j, x_v[j].copy()) for j in range(n_items)]
    return Dataset(users=users, items=items, interactions=interactions, z_dim=z_dim)


def _fmt(x: float) -> str:
    return repr(float(x))


def save_dataset(dataset: Dataset, path: str) -> None:
    """Write the line-oriented tab-separated text format."""
    with open(path, "w", encoding="ascii") as f:
        f.write(FORMAT_MAGIC + "\n")
        f.write(f"users\t{dataset.n_users}\t{dataset.feature_dim}\n")
        f.write(f"items\t{dataset.n_items}\t{dataset.feature_dim}\n")
        f.write(f"interactions\t{len(dataset.interactions)}\t{dataset.z_dim}\n")
        for u in dataset.users:
            f.write("U\t%d\t%s\n" % (u.user_id, "\t".join(_fmt(x) for x in u.features)))
        for v in dataset.items:
            f.write("I\t%d\t%s\n" % (v.item_id, "\t".join(_fmt(x) for x in v.features)))
        for r in dataset.interactions:
            f.write("X\t%d\t%d\t%d\t%s\n" % (r.user_id, r.item_id, r.behavior, _fmt(r.value)))


def load_dataset(path: str) -> Dataset:
    """Parse the text format; malformed input raises with the offending line."""
    with open(path, "r", encoding="ascii") as f:
        lines = f.read().splitlines()

    def bad(lineno: int, msg: str) -> FileFormatError:
        return FileFormatError(msg, path=path, line=lineno)

    if not lines or lines[0] != FORMAT_MAGIC:
        raise bad(1, f"expected header {FORMAT_MAGIC!r}")
    if len(lines) < 4:
        raise bad(len(lines), "truncated header")

    def header(lineno: int, tag: str, n_fields: int) -> list[int]:
        parts = lines[lineno - 1].split("\t")
        if len(parts) != n_fields + 1 or parts[0] != tag:
            raise bad(lineno, f"expected '{tag}' header with {n_fields} fields")
        try:
            return [int(p) for p in parts[1:]]
        except ValueError:
            raise bad(lineno, f"non-integer field in '{tag}' header") from None

    n_users, d_x_u = header(2, "users", 2)
    n_items, d_x_v = header(3, "items", 2)
    n_inter, z_dim = header(4, "interactions", 2)
    if d_x_u != d_x_v:
        raise bad(3, f"item feature dim {d_x_v} != user feature dim {d_x_u}")

    expected = 4 + n_users + n_items + n_inter
    if len(lines) != expected:
        raise bad(len(lines), f"expected {expected} lines, found {len(lines)}")

    users: list[UserRecord] = []
    items: list[ItemRecord] = []
    interactions: list[InteractionRecord] = []
    for off, line in enumerate(lines[4:], start=5):
        parts = line.split("\t")
        try:
            if parts[0] == "U":
                if len(parts) != 2 + d_x_u:
                    raise bad(off, f"user record needs {d_x_u} features")
                users.append(
                    UserRecord(int(parts[1]), np.array([float(p) for p in parts[2:]]))
                )
            elif parts[0] == "I":
                if len(parts) != 2 + d_x_u:
                    raise bad(off, f"item record needs {d_x_u} features")
                items.append(
                    ItemRecord(int(parts[1]), np.array([float(p) for p in parts[2:]]))
                )
            elif parts[0] == "X":
                if len(parts) != 5:
                    raise bad(off, "interaction record needs 4 fields")
                interactions.append(
                    InteractionRecord(
                        int(parts[1]), int(parts[2]), int(parts[3]), float(parts[4])
                    )
                )
            else:
                raise bad(off, f"unknown record tag {parts[0]!r}")
        except ValueError:
            raise bad(off, "malformed numeric field") from None

    if len(users) != n_users:
        raise bad(expected, f"expected {n_users} user records, found {len(users)}")
    if len(items) != n_items:
        raise bad(expected, f"expected {n_items} item records, found {len(items)}")
    if len(interactions) != n_inter:
        raise bad(expected, f"expected {n_inter} interaction records")

    ds = Dataset(users=users, items=items, interactions=interactions, z_dim=z_dim)
    ds.validate()
    return ds
