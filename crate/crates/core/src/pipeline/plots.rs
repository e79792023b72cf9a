use std::fmt::{self, Write};
use std::path::{Path, PathBuf};

use super::AnalysisReport;
use crate::analytics::FrequencyTable;
use crate::error::{Error, Result};
use crate::text::Sentiment;

/// Figure families a report can be drawn as.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Plot {
    PitchHistogram,
    Sentiment,
    Phonetics,
    VowelFrequency,
    CharacterFrequency,
    WordFrequency,
    Ngram(usize),
    TrainingCurves,
}

impl fmt::Display for Plot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Plot::PitchHistogram => f.write_str("pitch_histogram"),
            Plot::Sentiment => f.write_str("sentiment"),
            Plot::Phonetics => f.write_str("phonetics"),
            Plot::VowelFrequency => f.write_str("vowel_frequency"),
            Plot::CharacterFrequency => f.write_str("character_frequency"),
            Plot::WordFrequency => f.write_str("word_frequency"),
            Plot::Ngram(n) => write!(f, "ngram{n}"),
            Plot::TrainingCurves => f.write_str("training_curves"),
        }
    }
}

impl Plot {
    /// Every family the report could hold, including one per n-gram order
    /// and the training curves.
    pub fn all_for(report: &AnalysisReport) -> Vec<Plot> {
        let mut v = vec![
            Plot::PitchHistogram,
            Plot::Sentiment,
            Plot::Phonetics,
            Plot::VowelFrequency,
            Plot::CharacterFrequency,
            Plot::WordFrequency,
        ];
        let mut orders: Vec<usize> = report.aggregates.ngrams.iter().filter_map(|t| match t.scope {
            crate::analytics::Scope::Ngram(n) => Some(n),
            _ => None,
        }).collect();
        orders.sort_unstable();
        orders.dedup();
        v.extend(orders.into_iter().map(Plot::Ngram));
        v.push(Plot::TrainingCurves);
        v
    }
}

#[derive(Debug)]
pub struct PlotOutcome {
    pub plot: Plot,
    /// CSV and SVG paths, or why the plot was skipped.
    pub result: Result<(PathBuf, PathBuf)>,
}

struct Figure {
    csv: String,
    svg: String,
}

fn missing(plot: Plot, why: &str) -> Error {
    Error::MissingSection(format!("{plot}: {why}"))
}

fn table_figure(plot: Plot, table: Option<&FrequencyTable>, title: &str, xlabel: &str) -> Result<Figure> {
    let table = table.filter(|t| !t.is_empty()).ok_or_else(|| missing(plot, "empty frequency table"))?;
    let bars: Vec<(String, f64)> = table.entries.iter().map(|(k, c)| (k.clone(), *c as f64)).collect();
    Ok(Figure { csv: table.to_csv(), svg: bar_chart(title, xlabel, "count", &bars) })
}

fn figure(report: &AnalysisReport, plot: Plot) -> Result<Figure> {
    let a = &report.aggregates;
    match plot {
        Plot::PitchHistogram => {
            let h = &a.pitch_histogram;
            if h.total() == 0 {
                return Err(missing(plot, "no voiced segments"));
            }
            let bars: Vec<(String, f64)> =
                h.counts.iter().map(|(&b, &c)| (format!("{}", h.bin_range(b).0), c as f64)).collect();
            Ok(Figure { csv: h.to_csv(), svg: bar_chart("Pitch distribution", "pitch bin start (Hz)", "segments", &bars) })
        }
        Plot::Sentiment => {
            let d = a.sentiment.as_ref().ok_or_else(|| missing(plot, "no classified segments"))?;
            let pct = d.display_pct();
            let mut csv = String::from("label,percent\n");
            let mut bars = Vec::new();
            for s in Sentiment::ALL {
                writeln!(csv, "{},{:.1}", s, pct[s.index()]).unwrap();
                bars.push((s.to_string(), pct[s.index()]));
            }
            Ok(Figure { csv, svg: bar_chart("Sentiment distribution", "sentiment", "percent", &bars) })
        }
        Plot::Phonetics => {
            let p = a.phonetics;
            if p.total() == 0 {
                return Err(missing(plot, "no letters in transcripts"));
            }
            let csv = format!("class,count\nvowels,{}\nconsonants,{}\n", p.vowels, p.consonants);
            let bars = [("vowels".to_string(), p.vowels as f64), ("consonants".to_string(), p.consonants as f64)];
            Ok(Figure { csv, svg: bar_chart("Phonetic composition", "class", "letters", &bars) })
        }
        Plot::VowelFrequency => table_figure(plot, Some(&a.vowels), "Vowel frequency", "vowel"),
        Plot::CharacterFrequency => table_figure(plot, Some(&a.characters), "Character frequency", "character"),
        Plot::WordFrequency => table_figure(plot, Some(&a.words), "Word frequency", "word"),
        Plot::Ngram(n) => {
            let t = a.ngrams.iter().find(|t| t.scope == crate::analytics::Scope::Ngram(n));
            table_figure(plot, t, &format!("{n}-gram frequency"), &format!("{n}-gram"))
        }
        Plot::TrainingCurves => {
            let c = report.training.as_ref().filter(|c| !c.is_empty()).ok_or_else(|| missing(plot, "no training curve"))?;
            let xs: Vec<f64> = c.epochs.iter().map(|m| m.epoch as f64).collect();
            let col = |f: fn(&crate::text::EpochMetrics) -> f64| c.epochs.iter().map(f).collect::<Vec<f64>>();
            let series = [
                ("train loss", col(|m| m.train_loss)),
                ("validation loss", col(|m| m.val_loss)),
                ("train accuracy", col(|m| m.train_acc)),
                ("validation accuracy", col(|m| m.val_acc)),
            ];
            Ok(Figure { csv: c.to_csv(), svg: line_chart("Training curves", "epoch", "loss / accuracy", &xs, &series) })
        }
    }
}

/// Writes `<plot>.csv` and `<plot>.svg` for every family in
/// [`Plot::all_for`]. A family without data is reported as
/// `MissingSection` and the others are still written.
pub fn emit_plots(report: &AnalysisReport, dir: &Path) -> Result<Vec<PlotOutcome>> {
    emit_selected(report, dir, &Plot::all_for(report))
}

pub fn emit_selected(report: &AnalysisReport, dir: &Path, plots: &[Plot]) -> Result<Vec<PlotOutcome>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::with_capacity(plots.len());
    for &plot in plots {
        let result = match figure(report, plot) {
            Ok(fig) => {
                let csv = dir.join(format!("{plot}.csv"));
                let svg = dir.join(format!("{plot}.svg"));
                std::fs::write(&csv, fig.csv).map_err(|e| Error::io(&csv, e))?;
                std::fs::write(&svg, fig.svg).map_err(|e| Error::io(&svg, e))?;
                Ok((csv, svg))
            }
            Err(e) => Err(e),
        };
        out.push(PlotOutcome { plot, result });
    }
    Ok(out)
}

const W: f64 = 720.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 80.0;
const COLORS: [&str; 4] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Round step of roughly `max / 5`.
fn tick_step(max: f64) -> f64 {
    if max <= 0.0 {
        return 1.0;
    }
    let raw = max / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|&s| s >= raw).unwrap_or(10.0 * mag)
}

fn frame(out: &mut String, title: &str, xlabel: &str, ylabel: &str, ymax: f64) {
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#).unwrap();
    writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(out, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, esc(title)).unwrap();
    let step = tick_step(ymax);
    let mut v = 0.0;
    while v <= ymax + step * 1e-9 {
        let y = TOP + ph - v / ymax * ph;
        writeln!(out, r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/>"##, LEFT + pw).unwrap();
        writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 6.0, y + 4.0, fmt_tick(v)).unwrap();
        v += step;
    }
    writeln!(out, r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{:.2}" stroke="black"/>"#, TOP + ph).unwrap();
    writeln!(out, r#"<line x1="{LEFT}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#, TOP + ph, LEFT + pw, TOP + ph).unwrap();
    writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, H - 12.0, esc(xlabel)).unwrap();
    writeln!(
        out,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        esc(ylabel)
    )
    .unwrap();
}

fn fmt_tick(v: f64) -> String {
    let r = (v * 1e6).round() / 1e6;
    format!("{r}")
}

fn axis_max(max: f64) -> f64 {
    let step = tick_step(max);
    ((max / step).ceil() * step).max(step)
}

pub(crate) fn bar_chart(title: &str, xlabel: &str, ylabel: &str, bars: &[(String, f64)]) -> String {
    let ymax = axis_max(bars.iter().map(|b| b.1).fold(0.0, f64::max));
    let mut out = String::new();
    frame(&mut out, title, xlabel, ylabel, ymax);
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    let slot = pw / bars.len().max(1) as f64;
    let rotate = bars.len() > 12;
    for (i, (label, v)) in bars.iter().enumerate() {
        let h = v / ymax * ph;
        let x = LEFT + i as f64 * slot + slot * 0.1;
        let y = TOP + ph - h;
        writeln!(out, r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{h:.2}" fill="{}"><title>{}: {}</title></rect>"#, slot * 0.8, COLORS[0], esc(label), v).unwrap();
        let cx = x + slot * 0.4;
        let ly = TOP + ph + 16.0;
        if rotate {
            writeln!(out, r#"<text x="{cx:.2}" y="{ly:.2}" text-anchor="end" transform="rotate(-60 {cx:.2} {ly:.2})">{}</text>"#, esc(label)).unwrap();
        } else {
            writeln!(out, r#"<text x="{cx:.2}" y="{ly:.2}" text-anchor="middle">{}</text>"#, esc(label)).unwrap();
        }
    }
    out.push_str("</svg>\n");
    out
}

pub(crate) fn line_chart(title: &str, xlabel: &str, ylabel: &str, xs: &[f64], series: &[(&str, Vec<f64>)]) -> String {
    let top = series.iter().flat_map(|s| s.1.iter().copied()).filter(|v| v.is_finite()).fold(0.0, f64::max);
    let ymax = axis_max(top);
    let mut out = String::new();
    frame(&mut out, title, xlabel, ylabel, ymax);
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    let (x0, x1) = (xs.first().copied().unwrap_or(0.0), xs.last().copied().unwrap_or(1.0));
    let span = if x1 > x0 { x1 - x0 } else { 1.0 };
    let px = |x: f64| LEFT + (x - x0) / span * pw;
    for &x in xs {
        writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, px(x), TOP + ph + 16.0, x).unwrap();
    }
    for (k, (name, ys)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<String> = xs.iter().zip(ys).map(|(&x, &y)| format!("{:.2},{:.2}", px(x), TOP + ph - y.max(0.0) / ymax * ph)).collect();
        writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, pts.join(" ")).unwrap();
        let ly = TOP + 14.0 + 16.0 * k as f64;
        writeln!(out, r#"<rect x="{:.2}" y="{:.2}" width="12" height="3" fill="{color}"/>"#, W - RIGHT - 170.0, ly - 4.0).unwrap();
        writeln!(out, r#"<text x="{:.2}" y="{ly:.2}">{}</text>"#, W - RIGHT - 152.0, esc(name)).unwrap();
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks() {
        assert_eq!(tick_step(100.0), 20.0);
        assert_eq!(tick_step(39.3), 10.0);
        assert_eq!(tick_step(0.9), 0.2);
        assert_eq!(axis_max(39.3), 40.0);
        assert_eq!(axis_max(0.0), 1.0);
    }

    #[test]
    fn svg_is_static_and_labeled() {
        let svg = bar_chart("T <1>", "x axis", "y axis", &[("a".into(), 3.0), ("b&c".into(), 1.0)]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("x axis") && svg.contains("y axis") && svg.contains("T &lt;1&gt;") && svg.contains("b&amp;c"));
        assert!(!svg.contains("<script"));
        let svg = line_chart("c", "epoch", "v", &[1.0, 2.0], &[("loss", vec![1.0, 0.5])]);
        assert_eq!(svg.matches("<polyline").count(), 1);
    }
}
