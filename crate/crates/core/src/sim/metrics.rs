use serde::{Deserialize, Serialize};

/// Point estimate and interval for one parameter in one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario_id: String,
    pub method: String,
    pub parameter: String,
    pub bias: f64,
    pub mse: f64,
    pub coverage: f64,
    pub mcse_bias: f64,
    pub n_ok: usize,
    pub n_failed: usize,
}

impl MetricsRow {
    /// Aggregates the successful replicates of one (scenario, method,
    /// parameter) cell. Variance uses the population divisor so that
    /// `mse = bias² + variance`; `mcse_bias` is `sd / sqrt(n_ok)` with the
    /// sample divisor. All statistics are NaN when no replicate succeeded.
    pub fn aggregate(
        scenario_id: &str,
        method: &str,
        parameter: &str,
        truth: f64,
        estimates: &[Estimate],
        n_failed: usize,
    ) -> Self {
        let k = estimates.len();
        let (bias, mse, coverage, mcse_bias) = if k == 0 {
            (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
        } else {
            let kf = k as f64;
            let errs: Vec<f64> = estimates.iter().map(|e| e.value - truth).collect();
            let bias = errs.iter().sum::<f64>() / kf;
            let ss = errs.iter().map(|e| (e - bias).powi(2)).sum::<f64>();
            let mse = bias * bias + ss / kf;
            let covered = estimates.iter().filter(|e| e.lower <= truth && truth <= e.upper).count();
            let mcse = if k > 1 { (ss / (kf - 1.0)).sqrt() / kf.sqrt() } else { f64::NAN };
            (bias, mse, covered as f64 / kf, mcse)
        };
        Self {
            scenario_id: scenario_id.into(),
            method: method.into(),
            parameter: parameter.into(),
            bias,
            mse,
            coverage,
            mcse_bias,
            n_ok: k,
            n_failed,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

pub const METRICS_HEADER: &str = "scenario_id,method,parameter,bias,mse,coverage,mcse_bias,n_ok,n_failed";

impl MetricsTable {
    pub fn find(&self, scenario_id: &str, method: &str, parameter: &str) -> Option<&MetricsRow> {
        self.rows
            .iter()
            .find(|r| r.scenario_id == scenario_id && r.method == method && r.parameter == parameter)
    }

    pub fn extend(&mut self, other: MetricsTable) {
        self.rows.extend(other.rows);
    }

    /// CSV with a fixed column order; floats use the shortest round-trip form.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.scenario_id, r.method, r.parameter, r.bias, r.mse, r.coverage, r.mcse_bias, r.n_ok, r.n_failed
            ));
        }
        out
    }
}
