//! Storage and computational accounting of a trained system.

use hdjscc_core::config::ExperimentConfig;
use serde::Serialize;

use crate::model::FullModel;

/// Scaling-factor parameter count: two vectors per latent family per rate,
/// `2 |Lambda| (C_z + C_v)`.
pub fn expected_scaling_params(lambda_count: usize, c_z: usize, c_v: usize) -> usize {
    2 * lambda_count * (c_z + c_v)
}

#[derive(Debug, Clone, Serialize)]
pub struct ComponentStorage {
    pub component: String,
    pub params: usize,
    pub bytes: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct StorageReport {
    pub components: Vec<ComponentStorage>,
    pub total_params: usize,
    pub total_bytes: usize,
    pub scaling_factor_params: usize,
    pub adapter_params: usize,
    /// Parameters of one fixed-operating-point model (no SA/RA modules, no
    /// scaling factors): the unit the separately-trained grid multiplies.
    pub single_model_params: usize,
}

const COMPONENT_PREFIXES: &[(&str, &str)] = &[
    ("f_s", "f_s."),
    ("g_d", "g_d."),
    ("g_a", "g_a."),
    ("h_a", "h_a."),
    ("g_s", "g_s."),
    ("h_s", "h_s."),
    ("prior", "prior."),
    ("scaling_factors", "scaling_factors."),
    ("sa_ra", "sa_ra."),
];

pub fn storage_report(model: &FullModel) -> StorageReport {
    let elem = model.dtype().size_in_bytes();
    let mut components = Vec::new();
    let mut total = 0usize;
    for (name, prefix) in COMPONENT_PREFIXES {
        let params = model.store.param_count(&[prefix]);
        total += params;
        components.push(ComponentStorage {
            component: (*name).to_string(),
            params,
            bytes: params * elem,
        });
    }
    let scaling = model.store.param_count(&["scaling_factors."]);
    let adapters = model.store.param_count(&["sa_ra."]);
    StorageReport {
        total_params: total,
        total_bytes: total * elem,
        scaling_factor_params: scaling,
        adapter_params: adapters,
        single_model_params: total - scaling - adapters,
        components,
    }
}

impl StorageReport {
    /// Storage of a separately-trained grid covering every `(lambda, eta)`
    /// pair, in units of this report's dtype.
    pub fn separate_grid_bytes(&self, lambda_count: usize, eta_count: usize, elem: usize) -> usize {
        lambda_count * eta_count * self.single_model_params * elem
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("component,params,bytes\n");
        for c in &self.components {
            out.push_str(&format!("{},{},{}\n", c.component, c.params, c.bytes));
        }
        out.push_str(&format!("total,{},{}\n", self.total_params, self.total_bytes));
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NodeComplexity {
    pub node: String,
    /// Exact multiply-accumulate count of the convolution stack.
    pub macs: u64,
    /// CNN layer count entering the aggregate estimate.
    pub conv_layers: usize,
    /// Measured seconds per image, when timed.
    pub measured_seconds: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComplexityReport {
    pub nodes: Vec<NodeComplexity>,
    /// `N C_feat^2 K^2 H W` style aggregate per node, using the internal
    /// feature width and a 3x3 kernel.
    pub aggregate_estimates: Vec<(String, u64)>,
}

struct ConvSpec {
    c_in: usize,
    c_out: usize,
    k: usize,
    h_out: usize,
    w_out: usize,
}

fn macs(specs: &[ConvSpec]) -> u64 {
    specs
        .iter()
        .map(|s| (s.c_in * s.c_out * s.k * s.k * s.h_out * s.w_out) as u64)
        .sum()
}

fn jscc_encoder_convs(cfg: &ExperimentConfig, h: usize, w: usize) -> Vec<ConvSpec> {
    let f = cfg.jscc.internal_channels;
    let n_res = cfg.jscc.n_residual_blocks;
    let mut v = vec![ConvSpec { c_in: 3, c_out: f, k: 3, h_out: h, w_out: w }];
    v.push(ConvSpec { c_in: f, c_out: f, k: 3, h_out: h / 2, w_out: w / 2 });
    for _ in 0..2 * n_res {
        v.push(ConvSpec { c_in: f, c_out: f, k: 3, h_out: h / 2, w_out: w / 2 });
    }
    v.push(ConvSpec { c_in: f, c_out: f, k: 3, h_out: h / 4, w_out: w / 4 });
    for _ in 0..2 * n_res {
        v.push(ConvSpec { c_in: f, c_out: f, k: 3, h_out: h / 4, w_out: w / 4 });
    }
    v.push(ConvSpec { c_in: f, c_out: cfg.jscc.c_out, k: 3, h_out: h / 4, w_out: w / 4 });
    v
}

fn jscc_decoder_convs(cfg: &ExperimentConfig, h: usize, w: usize) -> Vec<ConvSpec> {
    let f = cfg.jscc.internal_channels;
    let n_res = cfg.jscc.n_residual_blocks;
    let mut v = vec![ConvSpec { c_in: cfg.jscc.c_out, c_out: f, k: 3, h_out: h / 4, w_out: w / 4 }];
    for _ in 0..2 * n_res {
        v.push(ConvSpec { c_in: f, c_out: f, k: 3, h_out: h / 4, w_out: w / 4 });
    }
    v.push(ConvSpec { c_in: f, c_out: f, k: 4, h_out: h / 2, w_out: w / 2 });
    for _ in 0..2 * n_res {
        v.push(ConvSpec { c_in: f, c_out: f, k: 3, h_out: h / 2, w_out: w / 2 });
    }
    v.push(ConvSpec { c_in: f, c_out: f, k: 4, h_out: h, w_out: w });
    v.push(ConvSpec { c_in: f, c_out: 3, k: 3, h_out: h, w_out: w });
    v
}

fn analysis_convs(cfg: &ExperimentConfig, h: usize, w: usize) -> Vec<ConvSpec> {
    let n = cfg.compressor.internal_channels;
    vec![
        ConvSpec { c_in: 3, c_out: n, k: 5, h_out: h / 2, w_out: w / 2 },
        ConvSpec { c_in: n, c_out: n, k: 3, h_out: h / 2, w_out: w / 2 },
        ConvSpec { c_in: n, c_out: n, k: 3, h_out: h / 2, w_out: w / 2 },
        ConvSpec { c_in: n, c_out: cfg.compressor.c_z, k: 5, h_out: h / 4, w_out: w / 4 },
    ]
}

fn hyper_analysis_convs(cfg: &ExperimentConfig, h: usize, w: usize) -> Vec<ConvSpec> {
    let n = cfg.compressor.internal_channels;
    vec![
        ConvSpec { c_in: cfg.compressor.c_z, c_out: n, k: 3, h_out: h / 4, w_out: w / 4 },
        ConvSpec { c_in: n, c_out: n, k: 3, h_out: h / 8, w_out: w / 8 },
        ConvSpec { c_in: n, c_out: cfg.compressor.c_v, k: 3, h_out: h / 16, w_out: w / 16 },
    ]
}

fn synthesis_convs(cfg: &ExperimentConfig, h: usize, w: usize) -> Vec<ConvSpec> {
    let n = cfg.compressor.internal_channels;
    vec![
        ConvSpec { c_in: cfg.compressor.c_z, c_out: n, k: 4, h_out: h / 2, w_out: w / 2 },
        ConvSpec { c_in: n, c_out: n, k: 3, h_out: h / 2, w_out: w / 2 },
        ConvSpec { c_in: n, c_out: n, k: 3, h_out: h / 2, w_out: w / 2 },
        ConvSpec { c_in: n, c_out: n, k: 4, h_out: h, w_out: w },
        ConvSpec { c_in: n, c_out: 3, k: 3, h_out: h, w_out: w },
    ]
}

fn hyper_synthesis_convs(cfg: &ExperimentConfig, h: usize, w: usize) -> Vec<ConvSpec> {
    let n = cfg.compressor.internal_channels;
    vec![
        ConvSpec { c_in: cfg.compressor.c_v, c_out: n, k: 4, h_out: h / 8, w_out: w / 8 },
        ConvSpec { c_in: n, c_out: n, k: 4, h_out: h / 4, w_out: w / 4 },
        ConvSpec { c_in: n, c_out: 2 * cfg.compressor.c_z, k: 3, h_out: h / 4, w_out: w / 4 },
    ]
}

/// Analytic per-node complexity for one image: the source runs the analog
/// encoder, the relay runs the analog decoder plus both analysis
/// transforms, the destination runs both synthesis transforms.
pub fn complexity_report(
    cfg: &ExperimentConfig,
    h: usize,
    w: usize,
    measured: Option<(f64, f64, f64)>,
) -> ComplexityReport {
    let enc = jscc_encoder_convs(cfg, h, w);
    let dec = jscc_decoder_convs(cfg, h, w);
    let ga = analysis_convs(cfg, h, w);
    let ha = hyper_analysis_convs(cfg, h, w);
    let gs = synthesis_convs(cfg, h, w);
    let hs = hyper_synthesis_convs(cfg, h, w);

    let n_e = enc.len();
    let n_d = dec.len();
    let n_l = ga.len();
    let n_a = ha.len();
    let c_feat = cfg
        .jscc
        .internal_channels
        .max(cfg.compressor.internal_channels) as u64;
    let agg = |layers: u64| layers * c_feat * c_feat * 9 * (h as u64) * (w as u64);

    let (ms, mr, md) = match measured {
        Some((a, b, c)) => (Some(a), Some(b), Some(c)),
        None => (None, None, None),
    };
    ComplexityReport {
        nodes: vec![
            NodeComplexity {
                node: "source".into(),
                macs: macs(&enc),
                conv_layers: n_e,
                measured_seconds: ms,
            },
            NodeComplexity {
                node: "relay".into(),
                macs: macs(&dec) + macs(&ga) + macs(&ha),
                conv_layers: n_d + n_l + n_a,
                measured_seconds: mr,
            },
            NodeComplexity {
                node: "destination".into(),
                macs: macs(&gs) + macs(&hs),
                conv_layers: gs.len() + hs.len(),
                measured_seconds: md,
            },
        ],
        aggregate_estimates: vec![
            ("source".into(), agg(n_e as u64)),
            ("relay".into(), agg((n_d + n_l + n_a) as u64)),
            ("destination".into(), agg((n_l + n_a) as u64)),
        ],
    }
}
