import logging

import torch.multiprocessing
from tqdm import tqdm

logger = logging.getLogger(__name__)


def run_replications(task_fn, tasks, jobs=1, desc="replications"):
    """Runs ``task_fn`` over ``tasks`` and returns results in task order.

    Every task carries its own seed, so results do not depend on ``jobs``.

    Args:
        task_fn (function): Picklable module-level function of one task.
        tasks (list): Task descriptions.
        jobs (int): Number of worker processes; 1 runs in the calling process.
        desc (str): Progress bar label.

    Returns:
        list: ``task_fn(task)`` for every task, in order.
    """
    tasks = list(tasks)
    if jobs <= 1 or len(tasks) <= 1:
        return [task_fn(task) for task in tqdm(tasks, desc=desc)]
    logger.info(f"spawning {jobs} workers for {len(tasks)} tasks")
    ctx = torch.multiprocessing.get_context("spawn")
    with ctx.Pool(processes=jobs) as pool:
        return list(tqdm(pool.imap(task_fn, tasks), total=len(tasks), desc=desc))
