//! Pianoroll SVG and Graphviz DOT renderings.

use std::fmt::Write;

use crate::error::{Error, Result};
use crate::graph::ScoreGraph;
use crate::score::{Measure, Score};

/// Largest graph rendered as DOT.
pub const DOT_MAX_NODES: usize = 300;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf", "#bcbd22", "#7f7f7f",
];
const UNVOICED: &str = "#999999";

#[derive(Debug, Clone, Copy)]
pub struct SvgOptions {
    pub px_per_tick: f64,
    pub px_per_semitone: f64,
}

impl Default for SvgOptions {
    fn default() -> Self {
        Self {
            px_per_tick: 8.0,
            px_per_semitone: 6.0,
        }
    }
}

/// Notes as rectangles coloured by voice (`voices`, else the score's own
/// labels), links as arrows from the end of one note to the start of the next.
pub fn pianoroll_svg(score: &Score, links: &[(usize, usize)], voices: Option<&[u32]>, options: &SvgOptions) -> String {
    let end = score.notes.iter().map(|n| n.offset()).max().unwrap_or(0);
    let (lo, hi) = score
        .notes
        .iter()
        .fold((u8::MAX, 0u8), |(lo, hi), n| (lo.min(n.pitch), hi.max(n.pitch)));
    let (lo, hi) = if score.is_empty() { (60, 60) } else { (lo, hi) };
    let rows = f64::from(hi - lo) + 1.0;
    let width = (end as f64 * options.px_per_tick).max(1.0);
    let height = rows * options.px_per_semitone;
    let x = |tick: u64| tick as f64 * options.px_per_tick;
    let y = |pitch: u8| f64::from(hi - pitch) * options.px_per_semitone;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    svg.push_str(concat!(
        "<defs><marker id=\"arrow\" viewBox=\"0 0 10 10\" refX=\"10\" refY=\"5\" markerWidth=\"6\" markerHeight=\"6\" orient=\"auto\">",
        "<path d=\"M0,0 L10,5 L0,10 z\"/></marker></defs>\n"
    ));
    for m in &score.measures {
        let _ = writeln!(
            svg,
            r##"<line class="barline" x1="{0}" y1="0" x2="{0}" y2="{height}" stroke="#dddddd"/>"##,
            x(m.onset)
        );
    }
    for (i, n) in score.notes.iter().enumerate() {
        let voice = voices.map(|v| v[i]).or(n.voice);
        let fill = voice.map_or(UNVOICED, |v| PALETTE[v as usize % PALETTE.len()]);
        let _ = writeln!(
            svg,
            r#"<rect class="note" id="{}" x="{}" y="{}" width="{}" height="{}" fill="{fill}"/>"#,
            escape(&n.id),
            x(n.onset),
            y(n.pitch),
            n.duration as f64 * options.px_per_tick,
            options.px_per_semitone
        );
    }
    let half = options.px_per_semitone / 2.0;
    for &(u, v) in links {
        let (a, b) = (&score.notes[u], &score.notes[v]);
        let _ = writeln!(
            svg,
            r#"<line class="link" x1="{}" y1="{}" x2="{}" y2="{}" stroke="black" marker-end="url(#arrow)"/>"#,
            x(a.offset()),
            y(a.pitch) + half,
            x(b.onset),
            y(b.pitch) + half
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// The typed graph as a DOT digraph, one edge per typed edge.
pub fn graph_dot(score: &Score, graph: &ScoreGraph) -> Result<String> {
    if graph.num_nodes() > DOT_MAX_NODES {
        return Err(Error::Size(format!(
            "graph has {} nodes, DOT export is limited to {DOT_MAX_NODES}; select a measure range",
            graph.num_nodes()
        )));
    }
    let mut dot = String::from("digraph score {\n  node [shape=box];\n");
    for n in &score.notes {
        let _ = writeln!(dot, "  \"{}\" [label=\"{} p{} @{}\"];", escape(&n.id), escape(&n.id), n.pitch, n.onset);
    }
    for e in &graph.edges {
        let _ = writeln!(
            dot,
            "  \"{}\" -> \"{}\" [label=\"{}\"];",
            escape(&graph.node_ids[e.src]),
            escape(&graph.node_ids[e.dst]),
            e.relation
        );
    }
    dot.push_str("}\n");
    Ok(dot)
}

/// Notes starting in measures `first..=last` (positions in the measure
/// map), with times shifted so the excerpt starts at tick 0.
pub fn measure_range(score: &Score, first: usize, last: usize) -> Result<Score> {
    if first > last || last >= score.measures.len() {
        return Err(Error::validation(
            "measures",
            format!("range {first}..={last} outside 0..{}", score.measures.len()),
        ));
    }
    let start = score.measures[first].onset;
    let stop = score.measures[last].onset + score.measures[last].duration;
    let measures = score.measures[first..=last]
        .iter()
        .map(|m| Measure {
            onset: m.onset - start,
            ..m.clone()
        })
        .collect();
    let notes = score
        .notes
        .iter()
        .filter(|n| n.onset >= start && n.onset < stop)
        .map(|n| {
            let mut n = n.clone();
            n.onset -= start;
            n
        })
        .collect();
    Score::new(score.divisions, measures, notes)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('"', "&quot;").replace('<', "&lt;").replace('>', "&gt;")
}
