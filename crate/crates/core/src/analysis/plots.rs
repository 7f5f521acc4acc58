//! CSV tables and small self-contained SVG charts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{Projection, SweepTable};
use crate::error::{Error, Result};

const W: f64 = 480.0;
const H: f64 = 360.0;
const PAD: f64 = 48.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#7f7f7f"];

/// Latent projection with one class label per row.
pub struct LabelledProjection<'a> {
    pub tag: &'a str,
    pub projection: &'a Projection,
    pub labels: &'a [String],
}

fn write(dir: &Path, name: &str, body: &str, out: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    out.push(path);
    Ok(())
}

fn safe(tag: &str) -> String {
    tag.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn fit(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let span = |it: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                (lo, hi)
            }
        };
        Frame { x: span(&mut xs.clone()), y: span(&mut ys.clone()) }
    }

    fn px(&self, v: f64) -> f64 {
        PAD + (v - self.x.0) / (self.x.1 - self.x.0) * (W - 2.0 * PAD)
    }

    fn py(&self, v: f64) -> f64 {
        H - PAD - (v - self.y.0) / (self.y.1 - self.y.0) * (H - 2.0 * PAD)
    }

    fn open(&self, title: &str, xl: &str, yl: &str) -> String {
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"11\">\n\
             <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
             <text x=\"{}\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">{}</text>\n",
            W / 2.0,
            escape(title)
        );
        let (l, r, t, b) = (PAD, W - PAD, PAD, H - PAD);
        let _ = writeln!(s, "<path d=\"M{l} {t} L{l} {b} L{r} {b}\" stroke=\"black\" fill=\"none\"/>");
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>", W / 2.0, H - 10.0, escape(xl));
        let _ = writeln!(s, "<text x=\"14\" y=\"{}\" transform=\"rotate(-90 14 {})\" text-anchor=\"middle\">{}</text>", H / 2.0, H / 2.0, escape(yl));
        for (v, anchor, x, y) in [
            (self.x.0, "middle", l, b + 14.0),
            (self.x.1, "middle", r, b + 14.0),
            (self.y.0, "end", l - 4.0, b),
            (self.y.1, "end", l - 4.0, t + 4.0),
        ] {
            let _ = writeln!(s, "<text x=\"{x:.1}\" y=\"{y:.1}\" text-anchor=\"{anchor}\">{v:.3}</text>");
        }
        s
    }
}

fn legend(s: &mut String, names: &[&str]) {
    for (i, n) in names.iter().enumerate() {
        let y = PAD + 14.0 * i as f64;
        let c = PALETTE[i % PALETTE.len()];
        let _ = writeln!(s, "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{c}\"/>", W - PAD + 4.0, y - 9.0);
        let _ = writeln!(s, "<text x=\"{}\" y=\"{y}\">{}</text>", W - PAD + 17.0, escape(n));
    }
}

fn sweep_svg(sweeps: &[(String, SweepTable)]) -> String {
    let pts = sweeps.iter().flat_map(|(_, t)| t.rows.iter());
    let f = Frame::fit(pts.clone().map(|r| r.eps), pts.map(|r| r.mean_buan).chain([0.0, 1.0]));
    let mut s = f.open("BUAN under latent perturbation", "perturbation size", "mean BUAN");
    for (i, (_, t)) in sweeps.iter().enumerate() {
        let c = PALETTE[i % PALETTE.len()];
        let d: Vec<String> = t.rows.iter().map(|r| format!("{:.2},{:.2}", f.px(r.eps), f.py(r.mean_buan))).collect();
        let _ = writeln!(s, "<polyline points=\"{}\" stroke=\"{c}\" stroke-width=\"2\" fill=\"none\"/>", d.join(" "));
        for r in &t.rows {
            let _ = writeln!(s, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{c}\"/>", f.px(r.eps), f.py(r.mean_buan));
        }
    }
    legend(&mut s, &sweeps.iter().map(|(a, _)| a.as_str()).collect::<Vec<_>>());
    s.push_str("</svg>\n");
    s
}

fn class_index(labels: &[String]) -> (Vec<&str>, Vec<usize>) {
    let mut names: Vec<&str> = labels.iter().map(String::as_str).collect();
    names.sort_unstable();
    names.dedup();
    let idx = labels.iter().map(|l| names.binary_search(&l.as_str()).unwrap()).collect();
    (names, idx)
}

fn scatter_svg(p: &LabelledProjection) -> String {
    let c = &p.projection.coords;
    let k = c.shape()[1];
    let xs = c.data().iter().step_by(k).copied();
    let ys = c.data().iter().skip(1.min(k - 1)).step_by(k).copied();
    let f = Frame::fit(xs.clone(), ys.clone());
    let ev = &p.projection.explained;
    let mut s = f.open(
        &format!("{}: PCA of latents", p.tag),
        &format!("PC1 ({:.1}%)", 100.0 * ev[0]),
        &format!("PC2 ({:.1}%)", 100.0 * ev.get(1).copied().unwrap_or(0.0)),
    );
    let (names, idx) = class_index(p.labels);
    for ((x, y), &ci) in xs.zip(ys).zip(&idx) {
        let col = PALETTE[ci % PALETTE.len()];
        let _ = writeln!(s, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"{col}\" fill-opacity=\"0.7\"/>", f.px(x), f.py(y));
    }
    legend(&mut s, &names);
    s.push_str("</svg>\n");
    s
}

fn projection_csv(p: &LabelledProjection) -> String {
    let k = p.projection.coords.shape()[1];
    let mut s = String::from("index,label");
    for j in 0..k {
        let _ = write!(s, ",pc{}", j + 1);
    }
    s.push('\n');
    for (i, (row, label)) in p.projection.coords.data().chunks_exact(k).zip(p.labels).enumerate() {
        let _ = write!(s, "{i},{label}");
        for v in row {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

/// Writes `perturb_<arch>.csv` per sweep plus `perturb_buan.svg`, and
/// `projection_<tag>.csv` / `.svg` per projection. Returns the paths written.
pub fn emit_plots(sweeps: &[(String, SweepTable)], projections: &[LabelledProjection], out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut out = Vec::new();
    for (arch, t) in sweeps {
        write(out_dir, &format!("perturb_{}.csv", safe(arch)), &t.to_csv(), &mut out)?;
    }
    if !sweeps.is_empty() {
        write(out_dir, "perturb_buan.svg", &sweep_svg(sweeps), &mut out)?;
    }
    for p in projections {
        if p.labels.len() != p.projection.coords.shape()[0] {
            return Err(Error::InvalidArgument(format!("{}: {} labels for {} points", p.tag, p.labels.len(), p.projection.coords.shape()[0])));
        }
        write(out_dir, &format!("projection_{}.csv", safe(p.tag)), &projection_csv(p), &mut out)?;
        write(out_dir, &format!("projection_{}.svg", safe(p.tag)), &scatter_svg(p), &mut out)?;
    }
    Ok(out)
}
