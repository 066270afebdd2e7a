use crate::analytic::{self, ChannelParams};
use crate::blocklength::BlocklengthMatrix;
use crate::error::{Error, Result};
use crate::traffic::TrafficParams;

/// A fully resolved scenario in linear units, shared by the model,
/// the optimizer and the simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub channel: ChannelParams,
    pub traffic: TrafficParams,
    pub k_users: usize,
    pub m_pre: usize,
    pub w_hz: f64,
    pub b_bits: f64,
    /// Propagation plus processing overhead per attempt, seconds.
    pub d_p_s: f64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.k_users == 0 || self.m_pre == 0 {
            return Err(Error::Domain("K and M_pre must be >= 1".into()));
        }
        if !(self.w_hz > 0.0) || !(self.b_bits > 0.0) || !(self.d_p_s >= 0.0) {
            return Err(Error::Domain("W and B must be > 0, D_P >= 0".into()));
        }
        Ok(())
    }

    pub fn cols(&self) -> usize {
        self.traffic.q_th + 1
    }

    pub fn collision_avoidance(&self) -> f64 {
        analytic::collision_avoidance_prob(self.k_users, self.m_pre)
            .expect("validated scenario has K, M >= 1")
    }

    pub fn success_prob(&self, n: f64) -> Result<f64> {
        analytic::success_prob(n, self.b_bits, &self.channel, self.k_users, self.m_pre)
    }

    pub fn success_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        row.iter().map(|&n| self.success_prob(n)).collect()
    }

    /// Matrix with every entry `W * tti`.
    pub fn fixed_tti(&self, tti_s: f64) -> BlocklengthMatrix {
        BlocklengthMatrix::from_tti(self.k_users, self.cols(), self.w_hz, tti_s)
    }

    pub fn check_matrix(&self, n: &BlocklengthMatrix) -> Result<()> {
        if n.users() != self.k_users || n.cols() != self.cols() {
            return Err(Error::Domain(format!(
                "blocklength matrix is {}x{}, scenario needs {}x{}",
                n.users(),
                n.cols(),
                self.k_users,
                self.cols()
            )));
        }
        if !n.all_positive() {
            return Err(Error::Domain("blocklength entries must be > 0".into()));
        }
        Ok(())
    }
}
