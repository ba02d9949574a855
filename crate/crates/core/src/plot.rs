//! Trajectory export and the 2D scatter figure: class clouds, the decision
//! line, and one polyline per attack trajectory, emitted as plain SVG.

use std::path::Path;

use crate::attacks::AttackResult;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};

const CLASS_COLORS: [&str; 2] = ["#3b6fb6", "#d1495b"];
const TRAJECTORY_COLORS: [&str; 4] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a"];

/// Committed 2D iterates of one attack. The first point is the legitimate
/// sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory2D {
    pub points: Vec<(f64, f64)>,
    pub method: String,
}

impl Trajectory2D {
    /// Pull the recorded trajectory out of an attack result. The attack must
    /// have run with `record_trajectory` on 2D data.
    pub fn from_attack(result: &AttackResult, method: impl Into<String>) -> Result<Self> {
        let Some(trajectory) = &result.trajectory else {
            return Err(Error::InvalidArgument(
                "attack result carries no trajectory; set record_trajectory".into(),
            ));
        };
        let mut points = Vec::with_capacity(trajectory.len());
        for t in trajectory {
            if t.len() != 2 {
                return Err(Error::InvalidArgument(format!(
                    "trajectory points must be 2D, got dimension {}",
                    t.len()
                )));
            }
            points.push((t.data()[0], t.data()[1]));
        }
        Ok(Self {
            points,
            method: method.into(),
        })
    }
}

/// CSV with columns `step,x1,x2`, one line per committed iterate.
pub fn trajectory_csv(traj: &Trajectory2D) -> String {
    let mut out = String::from("step,x1,x2\n");
    for (step, (x1, x2)) in traj.points.iter().enumerate() {
        out.push_str(&format!("{step},{x1:.9},{x2:.9}\n"));
    }
    out
}

pub fn write_trajectory_csv(traj: &Trajectory2D, path: impl AsRef<Path>) -> Result<()> {
    Ok(std::fs::write(path, trajectory_csv(traj))?)
}

/// Scatter figure over a 2D dataset: both class clouds in two colors, the
/// boundary segment, one polyline per trajectory, and a ring around the
/// attacked point. The viewBox spans the dataset's feature box and the y
/// axis is flipped so larger x₂ is up.
pub fn render_svg_scatter(
    train: &LabeledDataset,
    attacked_point: (f64, f64),
    trajectories: &[Trajectory2D],
    boundary: ((f64, f64), (f64, f64)),
) -> Result<String> {
    if train.dim() != 2 {
        return Err(Error::InvalidArgument(format!(
            "scatter figure needs 2D data, got dimension {}",
            train.dim()
        )));
    }
    let lo = train.feature_lo;
    let hi = train.feature_hi;
    let span = hi - lo;
    let flip = |y: f64| hi + lo - y;
    let r_point = span / 220.0;
    let stroke = span / 260.0;

    let mut svg = String::new();
    svg.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"{lo} {lo} {span} {span}\">\n"
    ));
    svg.push_str(&format!(
        "<rect x=\"{lo}\" y=\"{lo}\" width=\"{span}\" height=\"{span}\" fill=\"#ffffff\"/>\n"
    ));

    for (class, color) in CLASS_COLORS.iter().enumerate() {
        svg.push_str(&format!("<g fill=\"{color}\" fill-opacity=\"0.55\">\n"));
        for (ex, &label) in train.examples.iter().zip(&train.labels) {
            if label != class {
                continue;
            }
            svg.push_str(&format!(
                "<circle cx=\"{:.4}\" cy=\"{:.4}\" r=\"{r_point:.4}\"/>\n",
                ex.data()[0],
                flip(ex.data()[1]),
            ));
        }
        svg.push_str("</g>\n");
    }

    let ((bx1, by1), (bx2, by2)) = boundary;
    svg.push_str(&format!(
        "<line x1=\"{bx1:.4}\" y1=\"{:.4}\" x2=\"{bx2:.4}\" y2=\"{:.4}\" \
         stroke=\"#444444\" stroke-width=\"{stroke:.4}\" stroke-dasharray=\"{:.4},{:.4}\"/>\n",
        flip(by1),
        flip(by2),
        4.0 * stroke,
        3.0 * stroke,
    ));

    for (i, traj) in trajectories.iter().enumerate() {
        let color = TRAJECTORY_COLORS[i % TRAJECTORY_COLORS.len()];
        let coords: Vec<String> = traj
            .points
            .iter()
            .map(|(x, y)| format!("{x:.4},{:.4}", flip(*y)))
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" \
             stroke-width=\"{:.4}\" data-method=\"{}\"/>\n",
            coords.join(" "),
            1.6 * stroke,
            xml_escape(&traj.method),
        ));
        for (x, y) in &traj.points {
            svg.push_str(&format!(
                "<circle cx=\"{x:.4}\" cy=\"{:.4}\" r=\"{:.4}\" fill=\"{color}\"/>\n",
                flip(*y),
                1.2 * r_point,
            ));
        }
    }

    svg.push_str(&format!(
        "<circle cx=\"{:.4}\" cy=\"{:.4}\" r=\"{:.4}\" fill=\"none\" \
         stroke=\"#000000\" stroke-width=\"{stroke:.4}\"/>\n",
        attacked_point.0,
        flip(attacked_point.1),
        2.5 * r_point,
    ));
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn write_svg_scatter(
    train: &LabeledDataset,
    attacked_point: (f64, f64),
    trajectories: &[Trajectory2D],
    boundary: ((f64, f64), (f64, f64)),
    path: impl AsRef<Path>,
) -> Result<()> {
    Ok(std::fs::write(
        path,
        render_svg_scatter(train, attacked_point, trajectories, boundary)?,
    )?)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_synthetic_2d;
    use crate::tensor::Tensor;

    fn traj(method: &str) -> Trajectory2D {
        Trajectory2D {
            points: vec![(8.0, 1.0), (6.5, 2.5), (5.2, 3.9)],
            method: method.into(),
        }
    }

    // Minimal well-formedness check: every opened tag closes in order.
    fn assert_well_formed_xml(text: &str) {
        let mut stack: Vec<String> = Vec::new();
        let mut rest = text;
        while let Some(start) = rest.find('<') {
            rest = &rest[start + 1..];
            let end = rest.find('>').expect("unclosed tag");
            let tag = &rest[..end];
            rest = &rest[end + 1..];
            if tag.starts_with('?') || tag.starts_with('!') {
                continue;
            }
            if let Some(name) = tag.strip_prefix('/') {
                let open = stack.pop().unwrap_or_else(|| panic!("stray </{name}>"));
                assert_eq!(open, name, "mismatched closing tag");
            } else if !tag.ends_with('/') {
                let name: String = tag
                    .chars()
                    .take_while(|c| !c.is_whitespace())
                    .collect();
                stack.push(name);
            }
        }
        assert!(stack.is_empty(), "unclosed tags {stack:?}");
    }

    #[test]
    fn trajectory_csv_has_header_plus_one_line_per_point() {
        let text = trajectory_csv(&traj("Our1"));
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "step,x1,x2");
        assert!(lines[1].starts_with("0,"));
        assert!(lines[3].starts_with("2,"));
    }

    #[test]
    fn from_attack_requires_recorded_2d_trajectory() {
        let no_traj = AttackResult {
            adversarial: Tensor::from_vec(vec![0.0, 0.0]),
            success: true,
            l2_distance: 0.0,
            iterations: 0,
            trajectory: None,
            first_inner_candidates: None,
            c_used: 10.0,
            failure: None,
        };
        assert!(Trajectory2D::from_attack(&no_traj, "Our1").is_err());

        let bad_dim = AttackResult {
            trajectory: Some(vec![Tensor::from_vec(vec![0.0, 0.0, 0.0])]),
            ..no_traj
        };
        assert!(Trajectory2D::from_attack(&bad_dim, "Our1").is_err());
    }

    #[test]
    fn svg_is_well_formed_with_one_polyline_per_trajectory() {
        let (train, _) = gen_synthetic_2d(3, 40, 5, 0.4).unwrap();
        let svg = render_svg_scatter(
            &train,
            (8.0, 1.0),
            &[traj("Our1"), traj("CW6")],
            ((0.0, 10.0), (10.0, 0.0)),
        )
        .unwrap();
        assert_well_formed_xml(&svg);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("<line").count(), 1);
        for color in CLASS_COLORS {
            assert!(svg.contains(color), "missing class color {color}");
        }
        assert!(svg.contains("viewBox=\"0 0 10 10\""));
    }

    #[test]
    fn svg_rejects_non_2d_data() {
        let data = LabeledDataset::new(
            vec![Tensor::from_vec(vec![0.0, 0.0, 0.0])],
            vec![0],
            2,
            0.0,
            1.0,
        )
        .unwrap();
        assert!(render_svg_scatter(&data, (0.0, 0.0), &[], ((0.0, 0.0), (1.0, 1.0))).is_err());
    }
}
