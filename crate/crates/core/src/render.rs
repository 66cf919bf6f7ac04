//! Trajectory export: long-form CSV and a standalone SVG overlay.

use std::fmt::Write as _;
use std::io::Write;

use crate::dynamics::VehicleState;
use crate::eval::{rollout, Driver, EvalConfig, Observer};
use crate::mpc::{imagine, LearnedOdometry, PolicySampler};
use crate::nn::params::ModelParams;
use crate::scenario::Scenario;

/// A named polyline of states; `group` separates multiple imagined futures.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: &'static str,
    pub group: usize,
    pub start: usize,
    pub states: Vec<VehicleState>,
}

/// Expert, realized and (with a network) imagined trajectories.
pub fn collect_series(
    params: Option<&ModelParams>,
    scn: &Scenario,
    scenario_id: usize,
    cfg: &EvalConfig,
    horizon: usize,
    stride: usize,
) -> Vec<Series> {
    let mut out = vec![Series {
        name: "expert",
        group: 0,
        start: 0,
        states: scn.expert.states.clone(),
    }];
    let Some(p) = params else {
        return out;
    };
    let realized = rollout(Driver::Policy(p), scn, scenario_id, 0, cfg);
    let mut obs = Observer::new(p, cfg.route);
    let stride = stride.max(1);
    for (t, st) in realized.iter().enumerate().take(realized.len().saturating_sub(1)) {
        obs.observe(scn, t, st);
        if t % stride == 0 && horizon > 0 {
            let mut smp = PolicySampler(crate::eval::step_rng(cfg.seed ^ 0x1a6e, scenario_id, 0, t));
            let im = imagine(
                &obs.net,
                scn,
                t,
                st,
                &obs.hidden,
                &mut smp,
                &LearnedOdometry,
                horizon,
                cfg.route,
                &cfg.sim,
            );
            out.push(Series {
                name: "imagined",
                group: t / stride,
                start: t + 1,
                states: im.future().to_vec(),
            });
        }
    }
    out.insert(
        1,
        Series {
            name: "realized",
            group: 0,
            start: 0,
            states: realized,
        },
    );
    out
}

pub fn write_series_csv<W: Write>(series: &[Series], mut w: W) -> std::io::Result<()> {
    writeln!(w, "series,group,step,x,y,yaw,speed")?;
    for s in series {
        for (i, st) in s.states.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                s.name,
                s.group,
                s.start + i,
                st.x,
                st.y,
                st.yaw,
                st.speed()
            )?;
        }
    }
    Ok(())
}

struct Frame {
    min: [f64; 2],
    scale: f64,
    height: f64,
}

impl Frame {
    fn map(&self, p: [f64; 2]) -> (f64, f64) {
        (
            (p[0] - self.min[0]) * self.scale + 10.0,
            self.height - ((p[1] - self.min[1]) * self.scale + 10.0),
        )
    }
}

fn path(frame: &Frame, pts: impl Iterator<Item = [f64; 2]>) -> String {
    let mut d = String::new();
    for (i, p) in pts.enumerate() {
        let (x, y) = frame.map(p);
        let _ = write!(d, "{}{x:.2},{y:.2} ", if i == 0 { "M" } else { "L" });
    }
    d
}

/// Standalone SVG with road corridor, other agents, expert, realized and
/// imagined trajectories. No external references.
pub fn render_svg(scn: &Scenario, series: &[Series]) -> String {
    let pts: Vec<[f64; 2]> = scn
        .roadgraph
        .points()
        .copied()
        .chain(series.iter().flat_map(|s| s.states.iter().map(|st| st.position())))
        .collect();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &pts {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1.0);
    let size = 800.0;
    let scale = (size - 20.0) / span;
    let width = (hi[0] - lo[0]) * scale + 20.0;
    let height = (hi[1] - lo[1]) * scale + 20.0;
    let frame = Frame { min: lo, scale, height };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.2} {height:.2}">"#
    );
    let _ = writeln!(svg, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    let road_w = 2.0 * scn.roadgraph.half_width * scale;
    for line in &scn.roadgraph.polylines {
        let d = path(&frame, line.iter().copied());
        let _ = writeln!(
            svg,
            r##"<path d="{d}" fill="none" stroke="#dddddd" stroke-width="{road_w:.2}" stroke-linecap="round" stroke-linejoin="round"/>"##
        );
        let _ = writeln!(
            svg,
            r##"<path d="{d}" fill="none" stroke="#999999" stroke-width="1" stroke-dasharray="4 4"/>"##
        );
    }
    for o in &scn.others {
        let d = path(&frame, o.poses.iter().map(|p| p.position()));
        let _ = writeln!(svg, r##"<path d="{d}" fill="none" stroke="#c8a000" stroke-width="1.5"/>"##);
    }
    for s in series {
        match s.name {
            "imagined" => {
                for st in &s.states {
                    let (x, y) = frame.map(st.position());
                    let _ = writeln!(
                        svg,
                        r##"<circle cx="{x:.2}" cy="{y:.2}" r="2" fill="#1f77b4" fill-opacity="0.5"/>"##
                    );
                }
            }
            name => {
                let color = if name == "expert" { "#2ca02c" } else { "#d62728" };
                let d = path(&frame, s.states.iter().map(|st| st.position()));
                let _ = writeln!(svg, r##"<path d="{d}" fill="none" stroke="{color}" stroke-width="2"/>"##);
            }
        }
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::NetConfig;
    use crate::scenario::{generate_scenario, ScenarioKind};

    #[test]
    fn svg_is_self_contained() {
        let p = ModelParams::init(NetConfig::default(), 0);
        let scn = generate_scenario(ScenarioKind::SCurve, 2);
        let series = collect_series(Some(&p), &scn, 0, &EvalConfig::default(), 5, 20);
        let svg = render_svg(&scn, &series);
        assert!(svg.starts_with("<svg"));
        assert!(!svg.contains("href") && !svg.contains("url("));
        assert_eq!(series.iter().filter(|s| s.name == "imagined").count(), 4);
    }

    #[test]
    fn csv_without_network_has_expert_only() {
        let scn = generate_scenario(ScenarioKind::Straight, 0);
        let series = collect_series(None, &scn, 0, &EvalConfig::default(), 5, 10);
        let mut out = Vec::new();
        write_series_csv(&series, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 1 + scn.len());
    }
}
