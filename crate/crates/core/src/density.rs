use nalgebra::DVector;
use serde::Serialize;

/// An approximate transition density with the pieces it was assembled from.
#[derive(Debug, Clone, Serialize)]
pub struct DensityEstimate {
    pub value: f64,
    pub log_value: f64,
    /// Terminal state the value refers to. For the continuous approximation
    /// this is the endpoint the shooting actually reached.
    pub endpoint: Vec<f64>,
    pub breakdown: Breakdown,
    /// Non-fatal warnings (unconverged shooting, Hamiltonian drift, ...).
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Breakdown {
    Continuous(ContinuousTerms),
    Discrete(DiscreteTerms),
}

/// `log p̂ = −½·sigma_logdet − ½·(action_term + riccati_trace_term + gradient_noise_term)`.
#[derive(Debug, Clone, Serialize)]
pub struct ContinuousTerms {
    /// `∫|Ū|² dt`, twice the action.
    pub action_term: f64,
    /// `∫ tr(gᵀ Q g) dt`.
    pub riccati_trace_term: f64,
    /// `∫ Λ̄ · Σ_k ∇g_k g_k dt`.
    pub gradient_noise_term: f64,
    /// `log|2π Σ_T|`.
    pub sigma_logdet: f64,
    pub lambda0: Vec<f64>,
    pub shooting_residual: f64,
    pub hamiltonian_drift: f64,
    pub steps: usize,
}

/// `log p̂ = ψ* − ½·hessian_logdet + log_jacobian`.
#[derive(Debug, Clone, Serialize)]
pub struct DiscreteTerms {
    pub psi: f64,
    /// `log|H/2π|` over the interior states.
    pub hessian_logdet: f64,
    /// Sum of the per-step log Jacobian factors.
    pub log_jacobian: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub steps: usize,
}

impl DensityEstimate {
    pub(crate) fn new(log_value: f64, endpoint: &DVector<f64>, breakdown: Breakdown, flags: Vec<String>) -> Self {
        Self {
            value: log_value.exp(),
            log_value,
            endpoint: endpoint.iter().copied().collect(),
            breakdown,
            flags,
        }
    }

    pub fn continuous(&self) -> Option<&ContinuousTerms> {
        match &self.breakdown {
            Breakdown::Continuous(c) => Some(c),
            Breakdown::Discrete(_) => None,
        }
    }

    pub fn discrete(&self) -> Option<&DiscreteTerms> {
        match &self.breakdown {
            Breakdown::Discrete(d) => Some(d),
            Breakdown::Continuous(_) => None,
        }
    }
}
