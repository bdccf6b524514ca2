//! Multiply-accumulate counts per layer: `M_h·M_w·F²·K_out·K_in` over each
//! layer's output map, where `K_in` includes concatenated skip channels.

use std::io::Write;

use serde::Serialize;

use crate::baseline::build_baseline;
use crate::error::{contract_err, Result};
use crate::nets::{build_discriminator, build_encoder, build_generator, NetworkSpec};
use crate::runspec::{Method, RunSpec};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FlopsLayerEntry {
    pub layer: String,
    pub m_h: usize,
    pub m_w: usize,
    pub f: usize,
    pub k_in: usize,
    pub k_out: usize,
    pub flops: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlopsReport {
    pub network: String,
    pub entries: Vec<FlopsLayerEntry>,
    pub total: u64,
}

pub fn flops_report(net: &NetworkSpec) -> Result<FlopsReport> {
    let shapes = net.shapes().map_err(|e| contract_err!("cannot resolve shapes of {}: {e}", net.name))?;
    let entries: Vec<FlopsLayerEntry> = net
        .layers
        .iter()
        .zip(&shapes)
        .map(|(l, s)| FlopsLayerEntry {
            layer: l.name.clone(),
            m_h: s.out_h,
            m_w: s.out_w,
            f: l.kernel,
            k_in: s.in_c,
            k_out: s.out_c,
            flops: (s.out_h * s.out_w * l.kernel * l.kernel * s.out_c * s.in_c) as u64,
        })
        .collect();
    let total = entries.iter().map(|e| e.flops).sum();
    Ok(FlopsReport { network: net.name.clone(), entries, total })
}

/// Per-network reports for one method and their sum `C_E + C_D`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MethodFlops {
    pub method: Method,
    pub networks: Vec<FlopsReport>,
    pub total: u64,
}

pub fn method_flops(method: Method, spec: &RunSpec) -> Result<MethodFlops> {
    let nets = match method {
        Method::GUnet => vec![build_encoder(spec)?, build_generator(spec)?],
        Method::Cgan => vec![
            build_encoder(spec)?,
            build_generator(spec)?,
            build_discriminator((spec.image_height, spec.image_width, spec.image_channels))?,
        ],
        Method::Baseline => {
            let (e, d) = build_baseline(spec)?;
            vec![e, d]
        }
    };
    let networks = nets.iter().map(flops_report).collect::<Result<Vec<_>>>()?;
    let total = networks.iter().map(|r| r.total).sum();
    Ok(MethodFlops { method, networks, total })
}

/// `flops.csv`: one row per layer (`<method>/<network>/<layer>`), then a
/// `total` row per network and per method with the dimension cells empty.
pub fn write_flops_csv(out: &mut impl Write, methods: &[MethodFlops]) -> std::io::Result<()> {
    writeln!(out, "layer,M_h,M_w,F,K_in,K_out,flops")?;
    for m in methods {
        for net in &m.networks {
            for e in &net.entries {
                writeln!(
                    out,
                    "{}/{}/{},{},{},{},{},{},{}",
                    m.method, net.network, e.layer, e.m_h, e.m_w, e.f, e.k_in, e.k_out, e.flops
                )?;
            }
            writeln!(out, "{}/{}/total,,,,,,{}", m.method, net.network, net.total)?;
        }
        writeln!(out, "{}/total,,,,,,{}", m.method, m.total)?;
    }
    Ok(())
}
