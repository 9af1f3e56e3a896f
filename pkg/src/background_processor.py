"""
Background Run Processing Module

Executes training runs on worker threads so ablations and preset comparisons
can fan out over (configuration, seed) pairs.

Key Features:
- Job queue with a pool of worker threads
- Progress callbacks with (run_id, status, progress, message)
- Run registry persistence (status, summary, error message)
- Deduplication: a config that already completed is not trained again

Architecture:
- Uses Python's threading and queue modules
- Each job trains with its own seeded RNG streams and output directory, so
  results do not depend on which worker ran them or in what order
- A threading.Event per run lets callers wait for specific runs

Processing Pipeline:
1. Run registered in the RunDatabase (or existing id returned)
2. Worker thread picks up the job and marks it running
3. Run manifest written to the output directory
4. train_run executes, reporting progress per iteration
5. Summary scalars stored and status set to completed (or failed)

Typical usage:
    processor = get_processor()
    run_id = processor.queue_run(config, "N24_seed0", progress_callback)
    processor.wait([run_id])
    summary = processor.get_result(run_id)
"""

import logging
import queue
import threading
from datetime import datetime
from typing import Callable, Dict, Iterable, Optional

import config
from .database import RunDatabase
from .errors import DynaError
from .experiment import TrainConfig, summarize_run, train_run
from .run_config import RunManifest, write_manifest

logging.basicConfig(level=config.LOG_LEVEL)
logger = logging.getLogger(__name__)

ProgressCallback = Callable[[int, str, int, str], None]


class RunProcessor:
    """
    Manages asynchronous training runs with worker threads.

    Training is numpy-bound; threads keep every run in one process and
    share the registry connection settings.
    """
    def __init__(self, max_workers: int = None, db: RunDatabase = None):
        """
        Initialize the run processor and start its workers.

        Args:
            max_workers: Number of worker threads (default: config.ABLATION_WORKERS)
            db: Run registry (default: RunDatabase(config.RUNS_DB))
        """
        self.db = db or RunDatabase(config.RUNS_DB)
        self.max_workers = max_workers or config.ABLATION_WORKERS
        self.job_queue = queue.Queue()
        self.workers = []
        self.running = False

        self.progress_callbacks: Dict[int, ProgressCallback] = {}
        self._done: Dict[int, threading.Event] = {}
        self._lock = threading.Lock()

        self.start()

    def start(self):
        """Start worker threads (no-op if already running)."""
        if self.running:
            return

        self.running = True
        for i in range(self.max_workers):
            worker = threading.Thread(target=self._worker_loop, name=f"RunWorker-{i}")
            worker.daemon = True
            worker.start()
            self.workers.append(worker)

        logger.info(f"Started {self.max_workers} run workers")

    def stop(self):
        """
        Stop all worker threads.

        Sends one sentinel per worker; runs already in progress finish first.
        """
        self.running = False
        for _ in range(self.max_workers):
            self.job_queue.put(None)
        for worker in self.workers:
            worker.join()
        self.workers = []
        logger.info("Stopped run workers")

    def _worker_loop(self):
        while self.running:
            try:
                job = self.job_queue.get(timeout=1)
            except queue.Empty:
                continue
            if job is None:  # Sentinel
                self.job_queue.task_done()
                break
            try:
                self._process_job(job)
            except Exception as e:
                logger.error(f"Worker error: {e}")
            finally:
                self.job_queue.task_done()

    def _process_job(self, job: Dict):
        """
        Train one run and record its outcome.

        Args:
            job: Dictionary containing:
                - run_id: Registry id
                - name: Run label
                - config: TrainConfig
        """
        run_id, name, run_config = job["run_id"], job["name"], job["config"]
        logger.info(f"Starting run {run_id} ({name})")
        manifest = RunManifest.for_config(run_config)

        try:
            self.db.update_run_status(run_id, "running")
            self._notify_progress(run_id, "running", 0, f"Training {name}...")
            if run_config.output_dir:
                write_manifest(run_config.output_dir, manifest)

            budget = run_config.total_steps

            def on_iteration(row):
                done = row.sim_steps_cum + row.syn_steps_cum
                self._notify_progress(run_id, "running", min(99, int(100 * done / budget)),
                                      f"iteration {row.iter}, mean return {row.mean_return:.3f}")

            result = train_run(run_config, on_iteration=on_iteration)
            summary = summarize_run(result.metrics, run_config.threshold)
            self.db.complete_run(run_id, summary)
            manifest.status = "completed"
            self._notify_progress(run_id, "completed", 100,
                                  f"Finished {summary['iterations']} iterations, max return {summary['max_return']:.3f}")
            logger.info(f"Completed run {run_id} ({name})")

        except Exception as e:
            error_msg = str(e)
            logger.error(f"Run {run_id} ({name}) failed: {error_msg}")
            self.db.update_run_status(run_id, "failed", error_msg)
            manifest.status = "failed"
            self._notify_progress(run_id, "failed", 0, f"Run failed: {error_msg}")

        finally:
            if run_config.output_dir:
                manifest.finished_at = datetime.now().isoformat(timespec="seconds")
                write_manifest(run_config.output_dir, manifest)
            self._done[run_id].set()

    def _notify_progress(self, run_id: int, status: str, progress: int, message: str):
        if run_id in self.progress_callbacks:
            try:
                self.progress_callbacks[run_id](run_id, status, progress, message)
            except Exception as e:
                logger.error(f"Progress callback error: {e}")

    def queue_run(self, run_config: TrainConfig, name: str = None,
                  progress_callback: ProgressCallback = None) -> int:
        """
        Queue a training run.

        A run whose config already completed in the registry is not queued
        again; a run already queued in this processor is not queued twice.

        Args:
            run_config: Validated TrainConfig
            name: Label for logs and the registry (default: "seed<seed>")
            progress_callback: Function called with (run_id, status, progress, message)

        Returns:
            int: Run ID for tracking
        """
        if not self.running:
            raise DynaError("run processor is stopped")
        name = name or f"seed{run_config.seed}"
        run_id = self.db.add_run(name, run_config)

        with self._lock:
            if run_id in self._done:
                return run_id
            self._done[run_id] = threading.Event()

        run = self.db.get_run(run_id)
        if run and run["status"] == "completed":
            logger.info(f"Run {run_id} ({name}) already completed")
            if progress_callback:
                progress_callback(run_id, "completed", 100, "Run already completed")
            self._done[run_id].set()
            return run_id

        if progress_callback:
            self.progress_callbacks[run_id] = progress_callback
        self.db.update_run_status(run_id, "pending")
        self.job_queue.put({"run_id": run_id, "name": name, "config": run_config})
        logger.info(f"Queued run {run_id} ({name})")
        return run_id

    def wait(self, run_ids: Optional[Iterable[int]] = None, timeout: float = None) -> bool:
        """
        Block until the given runs (default: all queued runs) have finished.

        Returns:
            bool: True if every run finished within the timeout
        """
        ids = list(self._done) if run_ids is None else list(run_ids)
        return all(self._done[run_id].wait(timeout) for run_id in ids)

    def get_result(self, run_id: int) -> Dict:
        """
        Summary of a completed run.

        Raises:
            DynaError: If the run failed or has not completed
        """
        run = self.db.get_run(run_id)
        if run is None:
            raise DynaError(f"unknown run {run_id}")
        if run["status"] != "completed":
            raise DynaError(f"run {run_id} ({run['name']}) is {run['status']}: {run['error_message']}")
        return run

    def get_run_status(self, run_id: int) -> Optional[Dict]:
        return self.db.get_run(run_id)

    def get_queue_size(self) -> int:
        return self.job_queue.qsize()

    def get_stats(self) -> Dict:
        """
        Get processor statistics.

        Returns:
            Dict containing run counts by status, total simulated steps,
            queue size and live worker count
        """
        stats = self.db.get_stats()
        stats["queue_size"] = self.get_queue_size()
        stats["workers_running"] = len([w for w in self.workers if w.is_alive()])
        return stats


# Global processor instance
_processor = None


def get_processor(max_workers: int = None) -> RunProcessor:
    """Get or create the singleton RunProcessor instance."""
    global _processor
    if _processor is None:
        _processor = RunProcessor(max_workers)
    return _processor


def shutdown_processor():
    """Stop the global processor instance and forget it."""
    global _processor
    if _processor:
        _processor.stop()
        _processor = None
