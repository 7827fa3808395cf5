//! The built-in example corpus: complete problem files shipped with the
//! tool, loadable by name.

use crate::error::{Error, Result};
use crate::problem::{load_problem_str, ProblemFile};

pub const EXAMPLES: &[(&str, &str)] = &[
    (
        "free_particle",
        include_str!("../problems/free_particle.problem"),
    ),
    (
        "harmonic_oscillator",
        include_str!("../problems/harmonic_oscillator.problem"),
    ),
    (
        "forced_oscillator_t",
        include_str!("../problems/forced_oscillator_t.problem"),
    ),
    ("r2_singular", include_str!("../problems/r2_singular.problem")),
    (
        "douglas_case_iv",
        include_str!("../problems/douglas_case_iv.problem"),
    ),
    ("rolling_disk", include_str!("../problems/rolling_disk.problem")),
    (
        "rolling_disk_second_F",
        include_str!("../problems/rolling_disk_second_F.problem"),
    ),
    (
        "nonholonomic_particle",
        include_str!("../problems/nonholonomic_particle.problem"),
    ),
    (
        "chaplygin_disk",
        include_str!("../problems/chaplygin_disk.problem"),
    ),
    (
        "pendulum_holonomic",
        include_str!("../problems/pendulum_holonomic.problem"),
    ),
];

pub fn example_names() -> Vec<&'static str> {
    EXAMPLES.iter().map(|(n, _)| *n).collect()
}

pub fn example_source(name: &str) -> Result<&'static str> {
    EXAMPLES
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, src)| *src)
        .ok_or_else(|| Error::UnknownExample {
            name: name.into(),
            available: example_names().join(", "),
        })
}

pub fn load_example(name: &str) -> Result<ProblemFile> {
    load_problem_str(example_source(name)?)
}

/// Run an example's full declared suite.
pub fn run_example(name: &str) -> Result<crate::runner::RunReport> {
    let problem = load_example(name)?;
    crate::runner::run_checks(&problem)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_examples_parse() {
        for (name, _) in EXAMPLES {
            let p = load_example(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(!p.checks.is_empty(), "{name} declares no checks");
        }
    }

    #[test]
    fn unknown_example_lists_available() {
        match example_source("unknown") {
            Err(Error::UnknownExample { available, .. }) => {
                assert!(available.contains("rolling_disk"));
                assert!(available.contains("pendulum_holonomic"));
            }
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn rolling_disk_has_two_fiber_fixtures() {
        let p = load_example("rolling_disk").unwrap();
        let s = p.sode.as_ref().unwrap();
        assert_eq!(s.n(), 4);
        assert_eq!(s.m(), 2);
        assert_eq!(p.fibermaps.len(), 2);
    }
}
