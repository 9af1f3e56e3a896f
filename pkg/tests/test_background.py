#!/usr/bin/env python3

import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

import src.background_processor as background_processor
from src.background_processor import RunProcessor
from src.database import RunDatabase
from src.errors import DynaError, NumericalError
from src.experiment import summarize_run, train_run
from src.run_config import read_manifest
from tests.conftest import make_tiny_config


def progress_callback(run_id, status, progress, message):
    print(f"📊 Run {run_id}: [{progress:3d}%] {status} - {message}")


def test_background_training(tmp_path):
    print("🔄 Testing Background Training Runs")
    print("=" * 50)

    events = []
    processor = RunProcessor(max_workers=2, db=RunDatabase(str(tmp_path / "runs.db")))
    try:
        configs = [make_tiny_config(seed=seed, threshold=-1e9, output_dir=str(tmp_path / f"seed{seed}"))
                   for seed in (0, 1)]
        run_ids = [processor.queue_run(cfg, f"seed{cfg.seed}",
                                       lambda *args: (events.append(args), progress_callback(*args)))
                   for cfg in configs]
        print(f"📤 Queued runs {run_ids}")
        assert processor.wait(run_ids, timeout=120)

        for run_id, cfg in zip(run_ids, configs):
            result = processor.get_result(run_id)
            expected = summarize_run(train_run(replace(cfg, output_dir="")).metrics, cfg.threshold)
            assert result["status"] == "completed"
            assert result["iterations"] == expected["iterations"]
            assert result["sim_steps"] == expected["sim_steps"]
            assert result["max_return"] == pytest.approx(expected["max_return"])
            assert result["success"] is True
            assert read_manifest(cfg.output_dir).status == "completed"
            print(f"✅ Run {run_id}: max return {result['max_return']:.3f}")

        assert any(status == "completed" and progress == 100 for _, status, progress, _ in events)
        stats = processor.get_stats()
        print(f"\n📈 Stats: {stats}")
        assert stats["completed_runs"] == 2
        assert stats["total_sim_steps"] == 2 * 96
    finally:
        processor.stop()


def test_identical_configs_share_a_run(tmp_path):
    db = RunDatabase(str(tmp_path / "runs.db"))
    processor = RunProcessor(max_workers=1, db=db)
    try:
        config = make_tiny_config()
        first = processor.queue_run(config, "a")
        second = processor.queue_run(replace(config, output_dir=str(tmp_path / "elsewhere")), "b")
        assert first == second
        processor.wait([first], timeout=120)
    finally:
        processor.stop()

    rerun = RunProcessor(max_workers=1, db=db)
    try:
        calls = []
        again = rerun.queue_run(config, "c", lambda *args: calls.append(args))
        assert again == first
        assert calls[0][1] == "completed"
        assert rerun.wait([again], timeout=1)
        assert len(db.get_runs()) == 1
        print("✅ Duplicate configs reuse the registered run")
    finally:
        rerun.stop()


def test_failed_run_is_recorded(tmp_path, monkeypatch):
    def broken_train(config, on_iteration=None):
        raise NumericalError("loss diverged")

    monkeypatch.setattr(background_processor, "train_run", broken_train)
    processor = RunProcessor(max_workers=1, db=RunDatabase(str(tmp_path / "runs.db")))
    try:
        run_id = processor.queue_run(make_tiny_config(), "broken")
        assert processor.wait([run_id], timeout=30)
        status = processor.get_run_status(run_id)
        assert status["status"] == "failed"
        assert "loss diverged" in status["error_message"]
        with pytest.raises(DynaError):
            processor.get_result(run_id)
        print(f"❌ Run failed as expected: {status['error_message']}")
    finally:
        processor.stop()


def test_stopped_processor_rejects_runs(tmp_path):
    processor = RunProcessor(max_workers=1, db=RunDatabase(str(tmp_path / "runs.db")))
    processor.stop()
    with pytest.raises(DynaError):
        processor.queue_run(make_tiny_config())


def test_registry_round_trip(tmp_path):
    db = RunDatabase(str(tmp_path / "runs.db"))
    run_id = db.add_run("N8_seed0", make_tiny_config())
    assert db.get_run(run_id)["status"] == "pending"
    assert np.isnan(db.get_run(run_id)["max_return"])

    summary = {"iterations": 6, "sim_steps": 96, "syn_steps": 0, "max_return": 3.5,
               "final_return": 3.0, "success": True, "steps_to_threshold": 32, "steps_capped": 32}
    db.complete_run(run_id, summary)
    run = db.get_run(run_id)
    assert run["status"] == "completed" and run["finished_at"] is not None
    assert run["success"] is True
    assert run["steps_to_threshold"] == 32

    frame = db.get_runs_df()
    assert "config_text" not in frame.columns
    assert list(frame["name"]) == ["N8_seed0"]
    assert db.get_runs_df(status="failed").empty

    with pytest.raises(ValueError):
        db.update_run_status(run_id, "exploded")
    db.delete_run(run_id)
    assert db.get_run(run_id) is None
    assert db.get_stats() == {"total_sim_steps": 0}


if __name__ == "__main__":
    with tempfile.TemporaryDirectory() as tmp:
        test_background_training(Path(tmp))
    print("\n🛑 Background processor stopped")
