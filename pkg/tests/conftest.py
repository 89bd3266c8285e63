"""Shared fixtures. Expensive artifacts (the protocol-trained SDN, the desk
sMNIST network) are built once and kept in pytest's cache directory; set
SPIKINGSSM_RETRAIN=1 to rebuild them."""

from __future__ import annotations

import os
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from spikingssm.io import load_checkpoint, load_mnist, save_checkpoint
from spikingssm.network import NetConfig, SpikingSSM, evaluate, train_task
from spikingssm.sdn import SDN
from spikingssm.sdn_training import generate_dataset, train_sdn

ROOT = Path(__file__).resolve().parents[1]

# SDN protocol at desk scale
SDN_TRAIN_COUNT = 50_000
SDN_TEST_COUNT = 10_000
SDN_LENGTH = 1024
SDN_EPOCHS = 100
SDN_LR = 1e-2
SDN_BATCH = 32

# desk-scale sMNIST run
TASK_CONFIG = NetConfig(depth=2, H=64, N=64, norm="layer", dropout=0.1, seed=0)
TASK_EPOCHS = 10
TASK_LR = 1e-2
TASK_BATCH = 50
TASK_WD = 0.01

_acceptance_lines: list[str] = []


def record_acceptance(number: int, name: str, ok: bool, detail: str) -> None:
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {name}: {detail}"
    print(line)
    _acceptance_lines.append(line)


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_acceptance_lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


def _cache_dir(request) -> Path:
    return Path(request.config.cache.mkdir("spikingssm"))


def _retrain() -> bool:
    return os.environ.get("SPIKINGSSM_RETRAIN", "") not in ("", "0")


@pytest.fixture(scope="session")
def sdn_test_set():
    return generate_dataset(SDN_TEST_COUNT, SDN_LENGTH, seed=2)


@pytest.fixture(scope="session")
def protocol_sdn(request, sdn_test_set):
    """(model, per-epoch rows, training seconds) for the full desk protocol."""
    path = _cache_dir(request) / "sdn_protocol.ckpt"
    if path.exists() and not _retrain():
        tensors, header = load_checkpoint(path)
        model = SDN()
        model.load_state_dict(tensors)
        return model.eval(), header["meta"]["epochs"], header["meta"]["seconds"]
    train = generate_dataset(SDN_TRAIN_COUNT, SDN_LENGTH, seed=1)
    model, report = train_sdn(train, SDN_EPOCHS, SDN_LR, SDN_BATCH, seed=0, test=sdn_test_set)
    save_checkpoint(path, model.state_dict(), "sdn", report.config, {"torch_seed": 0},
                    {"epochs": report.epochs, "seconds": report.seconds})
    return model.eval(), report.epochs, report.seconds


@pytest.fixture(scope="session")
def mnist_data():
    directory = Path(os.environ.get("SPIKINGSSM_DATA", ROOT / "data" / "mnist"))
    if not (directory / "train-images-idx3-ubyte.gz").exists() and not (directory / "train-images-idx3-ubyte").exists():
        pytest.fail(f"MNIST IDX files not found in {directory}; run scripts/fetch_mnist.py first")
    return load_mnist(directory, "train"), load_mnist(directory, "test")


@pytest.fixture(scope="session")
def smnist_run(request, protocol_sdn, mnist_data):
    """Desk-scale sMNIST network trained in SDN mode, with both evaluations."""
    path = _cache_dir(request) / "smnist_net.ckpt"
    sdn = protocol_sdn[0]
    train, test = mnist_data
    if path.exists() and not _retrain():
        tensors, header = load_checkpoint(path)
        net = SpikingSSM(NetConfig.from_dict(header["config"]), sdn)
        net.load_state_dict(tensors)
        history, seconds = header["meta"]["history"], header["meta"]["seconds"]
    else:
        torch.set_num_threads(1)
        net = SpikingSSM(TASK_CONFIG, sdn)
        start = time.perf_counter()
        history = train_task(net, train, test, "sdn", TASK_EPOCHS, TASK_LR, TASK_BATCH, TASK_WD, seed=0)
        seconds = time.perf_counter() - start
        save_checkpoint(path, net.state_dict(), "net", TASK_CONFIG.to_dict(), {"torch_seed": 0},
                        {"history": history, "seconds": seconds})
    parallel = evaluate(net, *test, mode="parallel_sdn")
    iterative = evaluate(net, *test, mode="iterative")
    return {"net": net, "history": history, "seconds": seconds, "parallel": parallel,
            "iterative": iterative, "train_count": len(train[1]), "test": test}
