"""EMA teacher updates"""
from config import OMEGA
from dtsl.models.network import ModelParams


class EmaConfig:
    """Smoothing factor of the teacher update"""

    def __init__(self, omega: float = OMEGA):
        if not 0.0 <= omega <= 1.0:
            raise ValueError(f"omega must lie in [0, 1], got {omega}")
        self.omega = omega


def make_teacher(student: ModelParams) -> ModelParams:
    """Exact copy of the student that never takes gradients"""
    return student.copy(requires_grad=False)


def ema_update(teacher: ModelParams, student: ModelParams, omega: float) -> ModelParams:
    """teacher <- omega * teacher + (1 - omega) * student, in place"""
    omega = EmaConfig(omega).omega
    if not teacher.is_compatible(student):
        raise ValueError("ema_update: teacher and student parameter layouts differ")

    for (name, t), (_, s) in zip(teacher, student):
        t.data = omega * t.data + (1.0 - omega) * s.data
        t.requires_grad = False
        t.grad = None
    return teacher
