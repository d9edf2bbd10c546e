import dataclasses

import pytest

from cnfpreserve.datasets import gen_synthetic, split
from cnfpreserve.engine import TEACHER_DIMS, DistillConfig, train_teacher

# Teacher recipe used throughout the tests: longer stage-1 style training than
# the distillation default so the teacher is well fit.
TEACHER_CFG = DistillConfig(lr_stg1=0.05, epochs_stg1=30)
TASK_NOISE = {"blobs": 1.0, "moons": 0.1, "xor": 0.8}


def make_task(task, n=1000, seed=7, teacher_seed=0):
    points = gen_synthetic(task, n, TASK_NOISE[task], seed)
    train, evl = split(points, 0.2, seed)
    teacher, _ = train_teacher(train, TEACHER_DIMS, dataclasses.replace(TEACHER_CFG, seed=teacher_seed))
    return teacher, train, evl


@pytest.fixture(scope="session")
def moons_task():
    return make_task("moons")
