import pytest

from sparsekit.config import default_config
from sparsekit.pipeline import (run_qat, run_student_prune, run_teacher_prep,
                                run_transfer)


@pytest.fixture(scope="session")
def teacher_ckpt():
    ckpt, _ = run_teacher_prep(default_config("teacher-prep", seed=1))
    return ckpt


@pytest.fixture(scope="session")
def sparse_ckpt(teacher_ckpt):
    ckpt, _ = run_student_prune(default_config("student-prune", seed=2), teacher_ckpt)
    return ckpt


@pytest.fixture(scope="session")
def task_teacher_ckpt(teacher_ckpt):
    cfg = default_config("transfer", seed=3, kd_enabled=False)
    ckpt, _ = run_transfer(cfg, teacher_ckpt)
    return ckpt


@pytest.fixture(scope="session")
def finetuned_ckpt(sparse_ckpt, task_teacher_ckpt):
    cfg = default_config("transfer", seed=4)
    ckpt, _ = run_transfer(cfg, sparse_ckpt, teacher_ckpt=task_teacher_ckpt)
    return ckpt


@pytest.fixture(scope="session")
def qat_ckpt(finetuned_ckpt, task_teacher_ckpt):
    cfg = default_config("qat", seed=5)
    ckpt, _ = run_qat(cfg, finetuned_ckpt, teacher_ckpt=task_teacher_ckpt)
    return ckpt
