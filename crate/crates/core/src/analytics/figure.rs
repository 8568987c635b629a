use std::fmt::Write as _;

use chrono::{Datelike, Duration, NaiveDate};

use super::{Panel, TimeSeries, TimelineData};

const WIDTH: f64 = 960.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const PANEL_H: f64 = 170.0;
const GAP: f64 = 45.0;
const PALETTE: [&str; 6] = ["#c0392b", "#27ae60", "#2980b9", "#95a5a6", "#8e44ad", "#d35400"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct XScale {
    start: NaiveDate,
    days: f64,
}

impl XScale {
    fn x(&self, day: NaiveDate) -> f64 {
        LEFT + (day - self.start).num_days() as f64 / self.days * (WIDTH - LEFT - RIGHT)
    }
}

fn panel_top(i: usize) -> f64 {
    TOP + i as f64 * (PANEL_H + GAP)
}

fn y(value: f64, max: f64, top: f64) -> f64 {
    top + PANEL_H - value / max * PANEL_H
}

fn polyline(svg: &mut String, s: &TimeSeries, xs: &XScale, max: f64, top: f64, style: &str) {
    let pts: Vec<String> = s
        .points()
        .iter()
        .map(|p| format!("{:.1},{:.1}", xs.x(p.day), y(p.value, max, top)))
        .collect();
    if !pts.is_empty() {
        writeln!(svg, r#"<polyline fill="none" {style} points="{}"/>"#, pts.join(" ")).unwrap();
    }
}

fn display_window(data: &TimelineData, panel: Panel) -> Option<usize> {
    data.series.iter().filter(|e| e.panel == panel).map(|e| e.window).max()
}

fn nice_max(v: f64) -> f64 {
    if v <= 0.0 {
        return 1.0;
    }
    let mag = 10f64.powf(v.log10().floor());
    [1.0, 2.0, 2.5, 5.0, 10.0].iter().map(|m| m * mag).find(|&m| m >= v).unwrap_or(10.0 * mag)
}

fn frame(svg: &mut String, top: f64, title: &str, max: f64, percent: bool) {
    let right = WIDTH - RIGHT;
    writeln!(
        svg,
        r##"<rect x="{LEFT}" y="{top}" width="{:.1}" height="{PANEL_H}" fill="#fafafa" stroke="#555"/>"##,
        right - LEFT
    )
    .unwrap();
    writeln!(svg, r#"<text x="{LEFT}" y="{:.1}" font-size="13" font-weight="bold">{}</text>"#, top - 8.0, esc(title)).unwrap();
    for frac in [0.0, 0.5, 1.0] {
        let v = max * frac;
        let label = if percent { format!("{:.0}%", v * 100.0) } else { format!("{v:.0}") };
        let yy = top + PANEL_H - frac * PANEL_H;
        writeln!(svg, r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{label}</text>"#, LEFT - 6.0, yy + 3.0).unwrap();
        writeln!(svg, r##"<line x1="{LEFT}" x2="{right:.1}" y1="{yy:.1}" y2="{yy:.1}" stroke="#ddd"/>"##).unwrap();
    }
}

fn legend(svg: &mut String, top: f64, entries: &[(String, &str)]) {
    for (i, (label, color)) in entries.iter().enumerate() {
        let yy = top + 12.0 + i as f64 * 16.0;
        let x = WIDTH - RIGHT + 12.0;
        writeln!(svg, r#"<rect x="{x:.1}" y="{:.1}" width="10" height="10" fill="{color}"/>"#, yy - 9.0).unwrap();
        writeln!(svg, r#"<text x="{:.1}" y="{yy:.1}" font-size="11">{}</text>"#, x + 15.0, esc(label)).unwrap();
    }
}

fn x_ticks(svg: &mut String, xs: &XScale, end: NaiveDate, bottom: f64) {
    let span = (end - xs.start).num_days();
    let mut day = xs.start;
    let mut ticks = Vec::new();
    if span > 60 {
        while day <= end {
            if day.day() == 1 {
                ticks.push((day, day.format("%b %Y").to_string()));
            }
            day += Duration::days(1);
        }
    } else {
        let step = (span / 8).max(1);
        while day <= end {
            ticks.push((day, day.format("%d %b").to_string()));
            day += Duration::days(step);
        }
    }
    for (d, label) in ticks {
        let x = xs.x(d);
        writeln!(svg, r##"<line x1="{x:.1}" x2="{x:.1}" y1="{bottom:.1}" y2="{:.1}" stroke="#555"/>"##, bottom + 4.0).unwrap();
        writeln!(svg, r#"<text x="{x:.1}" y="{:.1}" font-size="10" text-anchor="middle">{label}</text>"#, bottom + 16.0).unwrap();
    }
}

/// Three stacked panels sharing the day axis: daily cases, the topic rate
/// and the stance fractions as stacked bands. Each panel draws its most
/// smoothed series prominently; raw values appear as thin lines or bars.
pub fn render_svg(data: &TimelineData) -> String {
    let days: Vec<NaiveDate> = data
        .series
        .iter()
        .flat_map(|e| e.series.points().iter().map(|p| p.day))
        .chain(data.markers.iter().map(|m| m.day))
        .collect();
    let start = days.iter().min().copied().unwrap_or_default();
    let end = days.iter().max().copied().unwrap_or(start).max(start + Duration::days(1));
    let xs = XScale {
        start,
        days: (end - start).num_days() as f64,
    };
    let height = panel_top(3) - GAP + 40.0;
    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif">"#
    )
    .unwrap();
    writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();

    // cases
    let top = panel_top(0);
    let cases: Vec<_> = data.series.iter().filter(|e| e.panel == Panel::Cases).collect();
    let max = nice_max(cases.iter().flat_map(|e| e.series.points()).map(|p| p.value).fold(0.0, f64::max));
    frame(&mut svg, top, "Confirmed cases per day", max, false);
    let bar_w = ((WIDTH - LEFT - RIGHT) / (xs.days + 1.0) * 0.8).max(0.5);
    let shown = display_window(data, Panel::Cases);
    for e in &cases {
        if e.window == 1 && shown != Some(1) {
            for p in e.series.points() {
                let yy = y(p.value, max, top);
                writeln!(
                    svg,
                    r##"<rect x="{:.1}" y="{yy:.1}" width="{bar_w:.1}" height="{:.1}" fill="#bbb"/>"##,
                    xs.x(p.day) - bar_w / 2.0,
                    top + PANEL_H - yy
                )
                .unwrap();
            }
        } else if Some(e.window) == shown {
            polyline(&mut svg, &e.series, &xs, max, top, r##"stroke="#333" stroke-width="2""##);
        }
    }

    // topic rate
    let top = panel_top(1);
    let rates: Vec<_> = data.series.iter().filter(|e| e.panel == Panel::TopicRate).collect();
    let max = nice_max(rates.iter().flat_map(|e| e.series.points()).map(|p| p.value).fold(0.0, f64::max)).min(1.0);
    let topic = rates.first().map(|e| e.series.name.clone()).unwrap_or_default();
    frame(&mut svg, top, &format!("Share of relevant posts on {topic}"), max, true);
    let shown = display_window(data, Panel::TopicRate);
    let mut entries = Vec::new();
    for (i, e) in rates.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if Some(e.window) == shown {
            polyline(&mut svg, &e.series, &xs, max, top, &format!(r#"stroke="{color}" stroke-width="2""#));
        } else {
            polyline(&mut svg, &e.series, &xs, max, top, &format!(r#"stroke="{color}" stroke-opacity="0.35""#));
        }
        let label = if e.window > 1 { format!("{} ({}-day)", e.series.name, e.window) } else { e.series.name.clone() };
        entries.push((label, color));
    }
    legend(&mut svg, top, &entries);

    // stance bands
    let top = panel_top(2);
    frame(&mut svg, top, &format!("Stance among {topic} posts"), 1.0, true);
    let shown = display_window(data, Panel::Stance);
    let bands: Vec<&TimeSeries> = data
        .series
        .iter()
        .filter(|e| e.panel == Panel::Stance && Some(e.window) == shown)
        .map(|e| &e.series)
        .collect();
    if let Some(first) = bands.first() {
        let band_days: Vec<NaiveDate> = first.points().iter().map(|p| p.day).collect();
        let mut base = vec![0.0; band_days.len()];
        let mut entries = Vec::new();
        for (i, band) in bands.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let upper: Vec<f64> = band_days
                .iter()
                .zip(&base)
                .map(|(d, b)| b + band.value_on(*d).unwrap_or(0.0))
                .collect();
            let mut pts: Vec<String> = band_days
                .iter()
                .zip(&upper)
                .map(|(d, v)| format!("{:.1},{:.1}", xs.x(*d), y(*v, 1.0, top)))
                .collect();
            pts.extend(
                band_days
                    .iter()
                    .zip(&base)
                    .rev()
                    .map(|(d, v)| format!("{:.1},{:.1}", xs.x(*d), y(*v, 1.0, top))),
            );
            writeln!(svg, r#"<polygon fill="{color}" fill-opacity="0.8" points="{}"/>"#, pts.join(" ")).unwrap();
            entries.push((band.name.clone(), color));
            base = upper;
        }
        legend(&mut svg, top, &entries);
    }
    x_ticks(&mut svg, &xs, end, top + PANEL_H);

    for m in &data.markers {
        let x = xs.x(m.day);
        writeln!(
            svg,
            r##"<line x1="{x:.1}" x2="{x:.1}" y1="{:.1}" y2="{:.1}" stroke="#000" stroke-dasharray="4 3"/>"##,
            TOP,
            top + PANEL_H
        )
        .unwrap();
        writeln!(svg, r#"<text x="{:.1}" y="{:.1}" font-size="10">{}</text>"#, x + 3.0, TOP + 12.0, esc(m.caption())).unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::super::{EventMarker, Point, SeriesEntry};
    use super::*;

    fn data(markers: Vec<EventMarker>) -> TimelineData {
        let start: NaiveDate = "2021-01-01".parse().unwrap();
        let mk = |name: &str, v: f64| TimeSeries::new(name, "u", (0..10).map(|i| Point { day: start + Duration::days(i), value: v }).collect()).unwrap();
        TimelineData {
            series: vec![
                SeriesEntry { panel: Panel::Cases, window: 1, series: mk("cases", 100.0) },
                SeriesEntry { panel: Panel::TopicRate, window: 1, series: mk("curfew", 0.2) },
                SeriesEntry { panel: Panel::Stance, window: 1, series: mk("too-strict", 0.5) },
                SeriesEntry { panel: Panel::Stance, window: 1, series: mk("ok", 0.5) },
            ],
            markers,
        }
    }

    #[test]
    fn panels_in_order() {
        let svg = render_svg(&data(vec![]));
        let cases = svg.find("Confirmed cases").unwrap();
        let rate = svg.find("Share of relevant posts").unwrap();
        let stance = svg.find("Stance among").unwrap();
        assert!(cases < rate && rate < stance);
        assert_eq!(svg.matches("<polygon").count(), 2);
        assert!(!svg.contains("stroke-dasharray"));
    }

    #[test]
    fn markers_draw_lines() {
        let m = EventMarker::new("2021-01-04".parse().unwrap(), "a <b>").unwrap();
        let svg = render_svg(&data(vec![m]));
        assert_eq!(svg.matches("stroke-dasharray").count(), 1);
        assert!(svg.contains("a &lt;b&gt;"));
    }
}
