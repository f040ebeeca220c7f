"""Seeded synthetic worlds: datasets with latent regions and configurable
class priors, plus synthetic model profiles whose coverage sets realize the
scale story — the large profile covers a strict superset of every specific
profile's regions, so it is better outside their comfort zones and worse
inside them.

All draws are counter-based (keyed by seed, split, and example index), so a
config maps to byte-identical datasets and prediction streams no matter how
generation is scheduled.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import _rng
from .backends import (
    BackendDescriptor,
    BackendRegistry,
    CostProfile,
    SyntheticBackend,
    SyntheticProfile,
)
from .dataset import DatasetBundle, LabeledExample, LabelSpace, Provenance
from .errors import InvalidConfig

SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class RegionSpec:
    id: str
    mass: float
    class_prior: tuple[float, ...]


@dataclass(frozen=True)
class ProfileSpec:
    name: str
    layer: str  # specific | large | augmented
    covered_regions: frozenset[str]
    in_region_accuracy: float
    out_region_accuracy: float
    sharpness: float = 4.0
    cost: CostProfile = field(default_factory=CostProfile)


@dataclass(frozen=True)
class WorldConfig:
    labels: tuple[str, ...]
    regions: tuple[RegionSpec, ...]
    n_train: int
    n_val: int
    n_test: int
    profiles: tuple[ProfileSpec, ...]
    seed: int

    def __post_init__(self):
        k = len(self.labels)
        if k < 2:
            raise InvalidConfig("need at least 2 labels")
        if not self.regions:
            raise InvalidConfig("need at least one region")
        mass = sum(r.mass for r in self.regions)
        if abs(mass - 1.0) > SIMPLEX_TOL:
            raise InvalidConfig(f"region masses sum to {mass!r}, not 1")
        region_ids = [r.id for r in self.regions]
        if len(set(region_ids)) != len(region_ids):
            raise InvalidConfig("region ids must be unique")
        known = set(region_ids)
        for region in self.regions:
            if len(region.class_prior) != k:
                raise InvalidConfig(f"region {region.id!r} prior has wrong length")
            if any(p < 0 for p in region.class_prior):
                raise InvalidConfig(f"region {region.id!r} prior has a negative entry")
            if abs(sum(region.class_prior) - 1.0) > SIMPLEX_TOL:
                raise InvalidConfig(f"region {region.id!r} prior does not sum to 1")
        if not any(p.layer == "large" for p in self.profiles):
            raise InvalidConfig("need at least one profile with layer = 'large'")
        names = [p.name for p in self.profiles]
        if len(set(names)) != len(names):
            raise InvalidConfig("profile names must be unique")
        for profile in self.profiles:
            unknown = profile.covered_regions - known
            if unknown:
                raise InvalidConfig(f"profile {profile.name!r} covers unknown regions {sorted(unknown)}")
        for n in (self.n_train, self.n_val, self.n_test):
            if n < 1:
                raise InvalidConfig("every split needs at least one example")


@dataclass(frozen=True)
class SyntheticWorld:
    config: WorldConfig
    bundle: DatasetBundle
    registry: BackendRegistry
    descriptors: tuple[BackendDescriptor, ...]


def _draw_split(config: WorldConfig, split: str, n: int) -> tuple[LabeledExample, ...]:
    masses = [r.mass for r in config.regions]
    out = []
    for i in range(n):
        ridx = _rng.choice_weighted(config.seed, masses, "region", split, i)
        region = config.regions[ridx]
        label = _rng.choice_weighted(config.seed, region.class_prior, "label", split, i)
        out.append(
            LabeledExample(id=f"{split}-{i:06d}", payload=f"region:{region.id}", gold=label)
        )
    return tuple(out)


def generate_world(config: WorldConfig) -> SyntheticWorld:
    """Sample the dataset and register one synthetic backend per profile."""
    label_space = LabelSpace(config.labels)
    splits = {
        "train": _draw_split(config, "train", config.n_train),
        "val": _draw_split(config, "val", config.n_val),
        "test": _draw_split(config, "test", config.n_test),
    }
    bundle = DatasetBundle(
        label_space=label_space,
        splits=splits,
        provenance=Provenance(source=f"synthetic:seed={config.seed}", content_hash=""),
    )

    registry = BackendRegistry()
    descriptors = []
    for spec in config.profiles:
        profile = SyntheticProfile(
            covered_regions=spec.covered_regions,
            in_region_accuracy=spec.in_region_accuracy,
            out_region_accuracy=spec.out_region_accuracy,
            sharpness=spec.sharpness,
        )
        descriptor = BackendDescriptor(
            id=spec.name,
            kind="synthetic",
            layer=spec.layer,
            config={
                "covered_regions": sorted(spec.covered_regions),
                "in_region_accuracy": spec.in_region_accuracy,
                "out_region_accuracy": spec.out_region_accuracy,
                "sharpness": spec.sharpness,
                "seed": config.seed,
            },
            cost=spec.cost,
        )
        registry.register(
            SyntheticBackend(descriptor, profile, k=label_space.k, seed=config.seed)
        )
        descriptors.append(descriptor)
    return SyntheticWorld(
        config=config, bundle=bundle, registry=registry, descriptors=tuple(descriptors)
    )


def staggered_config(seed: int = 7, n_train: int = 4000, n_val: int = 2500, n_test: int = 5000) -> WorldConfig:
    """Three specific models with nested, staggered region coverage plus an
    omniscient-but-mediocre large model and one augmented specialist. Routing
    this world produces one dominant first stage, small shares for the lower
    stages, and a modest terminal share."""
    return WorldConfig(
        labels=("c0", "c1", "c2", "c3"),
        regions=(
            RegionSpec("r0", 0.38, (0.40, 0.30, 0.20, 0.10)),
            RegionSpec("r1", 0.22, (0.10, 0.40, 0.30, 0.20)),
            RegionSpec("r2", 0.18, (0.25, 0.25, 0.25, 0.25)),
            RegionSpec("r3", 0.22, (0.10, 0.20, 0.30, 0.40)),
        ),
        n_train=n_train,
        n_val=n_val,
        n_test=n_test,
        profiles=(
            ProfileSpec(
                "ssm_alpha", "specific", frozenset({"r0", "r1", "r2"}), 0.88, 0.40,
                sharpness=6.0, cost=CostProfile(5.0, 500.0, 0.0),
            ),
            ProfileSpec(
                "ssm_beta", "specific", frozenset({"r1", "r2"}), 0.86, 0.45,
                sharpness=6.0, cost=CostProfile(6.0, 450.0, 0.0),
            ),
            ProfileSpec(
                "ssm_gamma", "specific", frozenset({"r2"}), 0.84, 0.50,
                sharpness=6.0, cost=CostProfile(4.0, 400.0, 0.0),
            ),
            ProfileSpec(
                "lm_omni", "large", frozenset({"r0", "r1", "r2", "r3"}), 0.78, 0.78,
                sharpness=5.0, cost=CostProfile(900.0, 0.0, 12.0),
            ),
            ProfileSpec(
                "assm_delta", "augmented", frozenset({"r3"}), 0.92, 0.30,
                sharpness=6.0, cost=CostProfile(5.0, 500.0, 0.0),
            ),
        ),
        seed=seed,
    )


def longtail_config(seed: int = 7, n_train: int = 2400, n_val: int = 2000, n_test: int = 4000) -> WorldConfig:
    """Long-tailed class priors concentrated per region. Head classes live in
    two regions: one the specific model owns outright, and one nobody covers,
    which is where the large model underfits them. The large profile still
    covers a strict superset of the specific profile's regions."""
    head = (0.46, 0.44, 0.04, 0.03, 0.02, 0.01)
    head_hard = (0.45, 0.45, 0.04, 0.03, 0.02, 0.01)
    return WorldConfig(
        labels=("c0", "c1", "c2", "c3", "c4", "c5"),
        regions=(
            RegionSpec("rh", 0.40, head),
            RegionSpec("rh_hard", 0.18, head_hard),
            RegionSpec("rm", 0.27, (0.05, 0.05, 0.42, 0.40, 0.05, 0.03)),
            RegionSpec("rt", 0.15, (0.03, 0.02, 0.05, 0.05, 0.44, 0.41)),
        ),
        n_train=n_train,
        n_val=n_val,
        n_test=n_test,
        profiles=(
            ProfileSpec(
                "ssm_head", "specific", frozenset({"rh"}), 0.96, 0.30,
                sharpness=6.0, cost=CostProfile(5.0, 500.0, 0.0),
            ),
            ProfileSpec(
                "lm_omni", "large", frozenset({"rh", "rm", "rt"}), 0.86, 0.52,
                sharpness=5.0, cost=CostProfile(900.0, 0.0, 12.0),
            ),
        ),
        seed=seed,
    )


PRESETS = {
    "staggered": staggered_config,
    "longtail": longtail_config,
}


def world_config_to_toml(config: WorldConfig) -> str:
    lines = [
        f"labels = {list(config.labels)!r}".replace("'", '"'),
        f"seed = {config.seed}",
        f"n_train = {config.n_train}",
        f"n_val = {config.n_val}",
        f"n_test = {config.n_test}",
        "",
    ]
    for region in config.regions:
        lines += [
            "[[region]]",
            f'id = "{region.id}"',
            f"mass = {region.mass!r}",
            f"class_prior = {list(region.class_prior)!r}",
            "",
        ]
    for profile in config.profiles:
        covered = str(sorted(profile.covered_regions)).replace("'", '"')
        lines += [
            "[[profile]]",
            f'name = "{profile.name}"',
            f'layer = "{profile.layer}"',
            f"covered_regions = {covered}",
            f"in_region_accuracy = {profile.in_region_accuracy!r}",
            f"out_region_accuracy = {profile.out_region_accuracy!r}",
            f"sharpness = {profile.sharpness!r}",
            "[profile.cost]",
            f"latency_ms_per_call = {profile.cost.latency_ms_per_call!r}",
            f"memory_mb = {profile.cost.memory_mb!r}",
            f"dollars_per_1k_calls = {profile.cost.dollars_per_1k_calls!r}",
            "",
        ]
    return "\n".join(lines)


def world_config_from_dict(doc: dict) -> WorldConfig:
    top = {"labels", "seed", "n_train", "n_val", "n_test", "region", "profile"}
    unknown = set(doc) - top
    if unknown:
        raise InvalidConfig(f"world config has unknown keys {sorted(unknown)}")
    try:
        regions = tuple(
            RegionSpec(
                id=str(r["id"]),
                mass=float(r["mass"]),
                class_prior=tuple(float(p) for p in r["class_prior"]),
            )
            for r in doc["region"]
        )
        profiles = []
        for p in doc["profile"]:
            cost_tbl = p.get("cost", {})
            profiles.append(
                ProfileSpec(
                    name=str(p["name"]),
                    layer=str(p["layer"]),
                    covered_regions=frozenset(str(r) for r in p["covered_regions"]),
                    in_region_accuracy=float(p["in_region_accuracy"]),
                    out_region_accuracy=float(p["out_region_accuracy"]),
                    sharpness=float(p.get("sharpness", 4.0)),
                    cost=CostProfile(
                        latency_ms_per_call=float(cost_tbl.get("latency_ms_per_call", 0.0)),
                        memory_mb=float(cost_tbl.get("memory_mb", 0.0)),
                        dollars_per_1k_calls=float(cost_tbl.get("dollars_per_1k_calls", 0.0)),
                    ),
                )
            )
        return WorldConfig(
            labels=tuple(str(x) for x in doc["labels"]),
            regions=regions,
            n_train=int(doc["n_train"]),
            n_val=int(doc["n_val"]),
            n_test=int(doc["n_test"]),
            profiles=tuple(profiles),
            seed=int(doc["seed"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidConfig(f"bad world config: {exc}") from None


def preset_config(name: str, seed: int | None = None) -> WorldConfig:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise InvalidConfig(
            f"unknown preset {name!r}; available: {sorted(PRESETS)}"
        ) from None
    return factory() if seed is None else factory(seed=seed)
