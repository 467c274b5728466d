use std::fmt;

use crate::error::{Error, Result};
use crate::net::{blend_params, ModelState};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TeacherProtocol {
    Static,
    /// Copy the student into the teacher after every `K`-th epoch.
    Sequential(usize),
    /// `teacher := gamma * student + (1 - gamma) * teacher` after every epoch.
    Ema(f64),
}

impl TeacherProtocol {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TeacherProtocol::Sequential(0) => Err(Error::Invalid("sequential protocol needs K >= 1".into())),
            TeacherProtocol::Ema(g) if !(g > 0.0 && g <= 1.0) => {
                Err(Error::Invalid(format!("ema protocol needs 0 < gamma <= 1, got {g}")))
            }
            _ => Ok(()),
        }
    }

    /// Whether the teacher is replaced after completed epoch `epoch`
    /// (1-based).
    pub fn swaps_at(&self, epoch: usize) -> bool {
        matches!(*self, TeacherProtocol::Sequential(k) if epoch > 0 && epoch.is_multiple_of(k))
    }
}

impl fmt::Display for TeacherProtocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TeacherProtocol::Static => write!(f, "static"),
            TeacherProtocol::Sequential(k) => write!(f, "sequential({k})"),
            TeacherProtocol::Ema(g) => write!(f, "ema({g})"),
        }
    }
}

/// Teacher for the epoch after completed epoch `epoch` (1-based).
///
/// On a sequential swap the new teacher takes the student's parameters and
/// configuration, so a student grown deeper than its teacher is accepted.
pub fn update_teacher<S: Scalar>(
    protocol: TeacherProtocol,
    teacher: &ModelState<S>,
    student: &ModelState<S>,
    epoch: usize,
) -> Result<ModelState<S>> {
    protocol.validate()?;
    if student.config().num_slots != 2 {
        return Err(Error::ConfigMismatch(format!("student must have 2 slots, has {}", student.config().num_slots)));
    }
    match protocol {
        TeacherProtocol::Static => Ok(teacher.clone()),
        TeacherProtocol::Sequential(_) if protocol.swaps_at(epoch) => {
            ModelState::from_parts(student.params().to_vec(), *student.config(), teacher.version() + 1)
        }
        TeacherProtocol::Sequential(_) => Ok(teacher.clone()),
        TeacherProtocol::Ema(g) => blend_params(student, teacher, S::of(g)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{init_model, ModelConfig};

    fn pair() -> (ModelState<f64>, ModelState<f64>) {
        let cfg = ModelConfig { num_filters: 4, filter_len: 4, hop: 2, hidden_width: 3, ..Default::default() };
        (init_model(cfg).unwrap(), init_model(ModelConfig { seed: 1, ..cfg }).unwrap())
    }

    #[test]
    fn sequential_swaps_only_at_multiples() {
        let (mut teacher, student) = pair();
        let original = teacher.clone();
        for epoch in 1..=40 {
            teacher = update_teacher(TeacherProtocol::Sequential(20), &teacher, &student, epoch).unwrap();
            if epoch < 20 {
                assert_eq!(teacher.params(), original.params());
            }
            if epoch == 20 {
                assert_eq!(teacher.params(), student.params());
            }
        }
        assert_eq!(teacher.version(), 2);
    }

    #[test]
    fn static_is_bitwise_constant() {
        let (teacher, student) = pair();
        let mut t = teacher.clone();
        for epoch in 1..=100 {
            t = update_teacher(TeacherProtocol::Static, &t, &student, epoch).unwrap();
        }
        assert_eq!(t, teacher);
    }

    #[test]
    fn ema_fixed_point_and_blend() {
        let (teacher, student) = pair();
        let same = update_teacher(TeacherProtocol::Ema(0.01), &teacher, &teacher, 1).unwrap();
        for (a, b) in same.params().iter().zip(teacher.params()) {
            assert!((a - b).abs() <= 1e-15 * b.abs().max(1.0));
        }
        let t = update_teacher(TeacherProtocol::Ema(0.25), &teacher, &student, 1).unwrap();
        for ((x, s), t0) in t.params().iter().zip(student.params()).zip(teacher.params()) {
            assert!((x - (0.25 * s + 0.75 * t0)).abs() < 1e-15);
        }
    }

    #[test]
    fn invalid_protocols() {
        let (teacher, student) = pair();
        for p in [TeacherProtocol::Sequential(0), TeacherProtocol::Ema(0.0), TeacherProtocol::Ema(1.5)] {
            assert!(update_teacher(p, &teacher, &student, 1).is_err());
        }
    }
}
