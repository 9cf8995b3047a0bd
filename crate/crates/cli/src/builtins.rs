//! Built-in example scenarios.

use crate::scenario::Scenario;

pub struct Builtin {
    pub name: &'static str,
    pub description: &'static str,
    /// The worked example or result the scenario reproduces.
    pub anchor: &'static str,
    pub source: &'static str,
}

pub const BUILTINS: &[Builtin] = &[
    Builtin {
        name: "free_particle_halfplane",
        description: "free particle on p > 0; mq/p is a global clock whose own flow is incomplete",
        anchor: "free-particle clock example",
        source: include_str!("../scenarios/free_particle_halfplane.json"),
    },
    Builtin {
        name: "norton_weinberg",
        description: "h = e^p with clock q e^-p; the clock flow cannot pass s = 1",
        anchor: "Norton's example",
        source: include_str!("../scenarios/norton_weinberg.json"),
    },
    Builtin {
        name: "harmonic_oscillator",
        description: "q fails as a clock; orbits recur; no clock at the origin (fails by design)",
        anchor: "recurrence and stationary-point obstructions",
        source: include_str!("../scenarios/harmonic_oscillator.json"),
    },
    Builtin {
        name: "pendulum",
        description: "local flow-time clocks near regular points of a nonlinear system",
        anchor: "local clock construction",
        source: include_str!("../scenarios/pendulum.json"),
    },
    Builtin {
        name: "qubit_pauli_demo",
        description: "Kahler identities, Killing dichotomy and Pauli obstruction for a qubit",
        anchor: "Pauli's theorem",
        source: include_str!("../scenarios/qubit_pauli_demo.json"),
    },
    Builtin {
        name: "qutrit_pauli_demo",
        description: "Pauli obstruction for a qutrit with commensurate gaps",
        anchor: "Pauli's theorem",
        source: include_str!("../scenarios/qutrit_pauli_demo.json"),
    },
];

pub fn find(name: &str) -> Option<&'static Builtin> {
    BUILTINS.iter().find(|b| b.name == name)
}

impl Builtin {
    pub fn scenario(&self) -> Scenario {
        Scenario::from_json(self.source).expect("built-in scenarios are valid")
    }
}

/// Table of built-in names, descriptions and anchors.
pub fn list_examples() -> String {
    let width = BUILTINS.iter().map(|b| b.name.len()).max().unwrap_or(0);
    let mut out = String::new();
    for b in BUILTINS {
        out.push_str(&format!("{:<width$}  {}  [{}]\n", b.name, b.description, b.anchor));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_builtin_parses() {
        for b in BUILTINS {
            assert_eq!(b.scenario().name, b.name);
        }
    }

    #[test]
    fn listing_names_required_examples() {
        let table = list_examples();
        for name in ["free_particle_halfplane", "norton_weinberg", "harmonic_oscillator", "pendulum",
            "qubit_pauli_demo", "qutrit_pauli_demo"]
        {
            assert!(table.contains(name));
        }
    }
}
