"""Shared fixtures: small seeded synthetic models."""

import numpy as np
import pytest

from ehm_tools.assets import ModelAsset, save_asset, synth_model
from ehm_tools.body import EhmModel
from ehm_tools.models import AssetKind, SynthSpec


@pytest.fixture(scope="session")
def composite_spec() -> SynthSpec:
    """A composite small enough for finite-difference checks."""
    return SynthSpec(v=280, j=8, s=4, e=2, k=12, head_v=80, head_j=3, head_k=8, seed=7)


@pytest.fixture(scope="session")
def composite_asset(composite_spec: SynthSpec) -> ModelAsset:
    return synth_model(composite_spec)


@pytest.fixture(scope="session")
def body_asset() -> ModelAsset:
    return synth_model(SynthSpec(v=200, j=8, s=4, e=0, k=12, seed=11, kind=AssetKind.BODY))


@pytest.fixture
def composite_model(composite_asset: ModelAsset) -> EhmModel:
    return EhmModel(composite_asset)


@pytest.fixture
def body_model(body_asset: ModelAsset) -> EhmModel:
    return EhmModel(body_asset)


@pytest.fixture
def asset_file(tmp_path, composite_asset: ModelAsset):
    """The composite written to a temporary EHMA file."""
    path = tmp_path / "model.ehma"
    save_asset(composite_asset, path)
    return path


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
