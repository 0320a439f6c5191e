# orchestrator/orchestrator.py
import logging
import queue
import threading
import time
import traceback
from typing import Any, Dict, List, Optional, Tuple

from common.data_models import ResultRow, RowTask
from common.errors import RuntimeBudgetExceeded

from .command_handlers import FINALIZERS, PLANNERS, ROW_HANDLERS, RunContext

logger = logging.getLogger(__name__)


class ExperimentWorker(threading.Thread):
    """
    Takes RowTasks from the shared task queue, runs the matching row handler
    and puts (key, rows | exception, runtime_ms) on the result queue.
    """

    def __init__(self, name: str, task_queue: queue.Queue, result_queue: queue.Queue, context: RunContext):
        super().__init__(name=name, daemon=True)
        self.task_queue = task_queue
        self.result_queue = result_queue
        self.context = context
        self._stop_event = threading.Event()

    def run(self):
        logger.debug(f"{self.name} started")
        while not self._stop_event.is_set():
            try:
                task: RowTask = self.task_queue.get(timeout=1.0)
            except queue.Empty:
                # タイムアウトは正常、stop() をチェックするため
                continue
            # 実行時間は --timings の時だけ出力される
            started = time.perf_counter()
            try:
                handler = ROW_HANDLERS[task.command]
                outcome: Any = handler(task, self.context)
            except Exception as e:
                logger.debug(f"{self.name}: task {task.command}{task.key} failed:\n{traceback.format_exc()}")
                outcome = e
            runtime_ms = (time.perf_counter() - started) * 1000.0
            self.result_queue.put((task.key, outcome, runtime_ms))
            self.task_queue.task_done()
        logger.debug(f"{self.name} stopped")

    def stop(self):
        self._stop_event.set()


class Orchestrator:
    """
    Plans one command into RowTasks, fans them out over a pool of worker
    threads and collects the rows in key order, so the report does not
    depend on the thread count or on scheduling.
    """

    def __init__(self, context: RunContext, threads: int = 1, runtime_budget_sec: Optional[float] = None):
        self.context = context
        self.threads = max(1, int(threads))
        self.runtime_budget_sec = runtime_budget_sec
        self.task_queue: queue.Queue = queue.Queue()
        self.result_queue: queue.Queue = queue.Queue()

    def plan(self) -> List[RowTask]:
        tasks = PLANNERS[self.context.command](self.context)
        logger.info(f"{self.context.command}: {len(tasks)} tasks on {self.threads} threads")
        return tasks

    def run(self) -> List[ResultRow]:
        """Run every task; raises the first task error to arrive, or RuntimeBudgetExceeded."""
        # 計画はメインスレッドで実行 (共有オブジェクトをここで準備する)
        tasks = self.plan()
        deadline = None if self.runtime_budget_sec is None else time.monotonic() + self.runtime_budget_sec
        # 全タスクを先にキューへ投入
        for task in tasks:
            self.task_queue.put(task)
        # タスク数より多いワーカーは起動しない
        workers = [ExperimentWorker(f"worker-{i}", self.task_queue, self.result_queue, self.context)
                   for i in range(min(self.threads, max(1, len(tasks))))]
        for w in workers:
            w.start()

        # 行キー -> (結果行, 実行時間)
        collected: Dict[Tuple[int, ...], Tuple[Any, float]] = {}
        try:
            while len(collected) < len(tasks):
                # 実行時間の上限チェック
                if deadline is not None and time.monotonic() > deadline:
                    raise RuntimeBudgetExceeded(
                        f"{len(collected)}/{len(tasks)} tasks done after {self.runtime_budget_sec} s")
                try:
                    key, outcome, runtime_ms = self.result_queue.get(timeout=0.2)
                except queue.Empty:
                    continue
                # ワーカー側の例外はここで再送出
                if isinstance(outcome, Exception):
                    logger.error(f"task {key} failed: {outcome}")
                    raise outcome
                collected[tuple(key)] = (outcome, runtime_ms)
        finally:
            # 例外時も含めて必ずワーカーを停止
            for w in workers:
                w.stop()

        # キー順に並べるのでスレッド数に依存しない
        rows: List[ResultRow] = []
        for key in sorted(collected):
            values, runtime_ms = collected[key]
            rows.extend(ResultRow(key=list(key), values=v, runtime_ms=runtime_ms) for v in values)
        # 全行がそろってからの検査 (単調性など)
        finalize = FINALIZERS.get(self.context.command)
        if finalize is not None:
            finalize(self.context, [r.values for r in rows])
        return rows
