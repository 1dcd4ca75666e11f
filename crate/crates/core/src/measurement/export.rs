use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use super::{AnalyticsSnapshot, SurveyRecord, UNDECIDED};
use crate::engine::RunArtifacts;
use crate::platform::EventKind;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("unknown export format `{0}` (expected survey, analytics, gexf, svg, events or transcript)")]
    UnknownFormat(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ExportFormat {
    /// `survey.csv`
    Survey,
    /// `analytics.csv`
    Analytics,
    /// `graphs/episode_NN.gexf`
    Gexf,
    /// `chart.svg`
    Svg,
    /// `events.jsonl`
    Events,
    /// `transcript.jsonl`
    Transcript,
}

impl ExportFormat {
    pub const ALL: [ExportFormat; 6] = [
        ExportFormat::Survey,
        ExportFormat::Analytics,
        ExportFormat::Gexf,
        ExportFormat::Svg,
        ExportFormat::Events,
        ExportFormat::Transcript,
    ];
}

impl FromStr for ExportFormat {
    type Err = ExportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "survey" => ExportFormat::Survey,
            "analytics" => ExportFormat::Analytics,
            "gexf" => ExportFormat::Gexf,
            "svg" => ExportFormat::Svg,
            "events" => ExportFormat::Events,
            "transcript" => ExportFormat::Transcript,
            other => return Err(ExportError::UnknownFormat(other.to_string())),
        })
    }
}

fn csv_string(rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

/// Columns: `episode, agent, role, vote, fav:<candidate>..., backend_error`.
/// A missing rating is an empty cell.
pub fn survey_csv(records: &[SurveyRecord], candidates: &[String]) -> String {
    let mut header = vec!["episode".to_string(), "agent".into(), "role".into(), "vote".into()];
    header.extend(candidates.iter().map(|c| format!("fav:{c}")));
    header.push("backend_error".into());
    let mut rows = vec![header];
    for r in records {
        let mut row = vec![
            r.episode.to_string(),
            r.agent.clone(),
            format!("{:?}", r.role).to_lowercase(),
            r.vote.to_string(),
        ];
        row.extend(candidates.iter().map(|c| {
            r.favorability.get(c).copied().flatten().map_or_else(String::new, |s| s.to_string())
        }));
        row.push(r.backend_error.to_string());
        rows.push(row);
    }
    csv_string(rows)
}

/// Columns: `episode, respondents, share:<candidate>..., share:undecided,
/// mean_fav:<candidate>..., count:<event kind>..., mentions:<candidate>...,
/// active_accounts, follow_edges`.
pub fn analytics_csv(snapshots: &[AnalyticsSnapshot], candidates: &[String]) -> String {
    let mut header = vec!["episode".to_string(), "respondents".into()];
    header.extend(candidates.iter().map(|c| format!("share:{c}")));
    header.push(format!("share:{UNDECIDED}"));
    header.extend(candidates.iter().map(|c| format!("mean_fav:{c}")));
    header.extend(EventKind::ALL.iter().map(|k| format!("count:{}", k.as_str())));
    header.extend(candidates.iter().map(|c| format!("mentions:{c}")));
    header.push("active_accounts".into());
    header.push("follow_edges".into());
    let mut rows = vec![header];
    for s in snapshots {
        let mut row = vec![s.episode.to_string(), s.respondents.to_string()];
        for key in candidates.iter().map(String::as_str).chain([UNDECIDED]) {
            row.push(s.vote_share.get(key).copied().unwrap_or(0.0).to_string());
        }
        row.extend(
            candidates
                .iter()
                .map(|c| s.mean_favorability.get(c).copied().flatten().map_or_else(String::new, |m| m.to_string())),
        );
        row.extend(EventKind::ALL.iter().map(|k| s.activity_counts.get(k).copied().unwrap_or(0).to_string()));
        row.extend(candidates.iter().map(|c| s.candidate_mentions.get(c).copied().unwrap_or(0).to_string()));
        row.push(s.active_accounts.len().to_string());
        row.push(s.follow_edges.len().to_string());
        rows.push(row);
    }
    csv_string(rows)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
        .replace('\'', "&apos;")
}

/// GEXF 1.3 snapshot of the follow graph after one episode.
///
/// Node attributes: `vote` (this episode's survey answer) and `role`. Edge
/// attribute: `active`, true when the follower opened the app this episode.
pub fn render_gexf(artifacts: &RunArtifacts, snapshot: &AnalyticsSnapshot) -> String {
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    out.push_str("<gexf xmlns=\"http://gexf.net/1.3\" version=\"1.3\">\n");
    let _ = writeln!(out, "  <meta>\n    <creator>mastosim</creator>\n    <description>follow graph after episode {}</description>\n  </meta>", snapshot.episode);
    out.push_str("  <graph defaultedgetype=\"directed\" mode=\"static\">\n");
    out.push_str("    <attributes class=\"node\">\n      <attribute id=\"vote\" title=\"vote\" type=\"string\"/>\n      <attribute id=\"role\" title=\"role\" type=\"string\"/>\n    </attributes>\n");
    out.push_str("    <attributes class=\"edge\">\n      <attribute id=\"active\" title=\"active\" type=\"boolean\"/>\n    </attributes>\n");
    out.push_str("    <nodes>\n");
    for agent in &artifacts.agents {
        let vote = artifacts
            .surveys
            .iter()
            .find(|r| r.episode == snapshot.episode && r.agent == agent.name())
            .map_or_else(|| UNDECIDED.to_string(), |r| r.vote.to_string());
        let _ = writeln!(
            out,
            "      <node id=\"{}\" label=\"{}\">\n        <attvalues>\n          <attvalue for=\"vote\" value=\"{}\"/>\n          <attvalue for=\"role\" value=\"{}\"/>\n        </attvalues>\n      </node>",
            xml_escape(&agent.account.0),
            xml_escape(agent.name()),
            xml_escape(&vote),
            format!("{:?}", agent.role()).to_lowercase()
        );
    }
    out.push_str("    </nodes>\n    <edges>\n");
    for (i, (from, to)) in snapshot.follow_edges.iter().enumerate() {
        let active = snapshot.active_accounts.contains(from);
        let _ = writeln!(
            out,
            "      <edge id=\"{i}\" source=\"{}\" target=\"{}\">\n        <attvalues>\n          <attvalue for=\"active\" value=\"{active}\"/>\n        </attvalues>\n      </edge>",
            xml_escape(&from.0),
            xml_escape(&to.0)
        );
    }
    out.push_str("    </edges>\n  </graph>\n</gexf>\n");
    out
}

const PALETTE: [&str; 6] = ["#c0392b", "#2471a3", "#27ae60", "#8e44ad", "#d68910", "#17a589"];

/// Two stacked line charts: vote share (top) and mean favorability
/// (bottom), one point per episode.
type Series<'a> = (String, &'a str, Vec<Option<f64>>, f64, f64, f64);

pub fn render_chart_svg(snapshots: &[AnalyticsSnapshot], candidates: &[String]) -> String {
    const W: f64 = 800.0;
    const LEFT: f64 = 60.0;
    const RIGHT: f64 = 170.0;
    const PANEL: f64 = 200.0;
    const TOP1: f64 = 40.0;
    const TOP2: f64 = 300.0;
    let n = snapshots.len();
    let plot_w = W - LEFT - RIGHT;
    let x = |i: usize| LEFT + if n > 1 { plot_w * i as f64 / (n - 1) as f64 } else { plot_w / 2.0 };

    let mut out = String::new();
    let _ = writeln!(out, "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"540\" viewBox=\"0 0 {W} 540\" font-family=\"sans-serif\" font-size=\"12\">");
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    for (top, title, lo, hi) in [(TOP1, "Vote share", 0.0, 1.0), (TOP2, "Mean favorability", 1.0, 10.0)] {
        let _ = writeln!(out, "<text x=\"{LEFT}\" y=\"{:.2}\" font-size=\"14\">{title}</text>", top - 12.0);
        let _ = writeln!(
            out,
            "<rect x=\"{LEFT}\" y=\"{top}\" width=\"{plot_w}\" height=\"{PANEL}\" fill=\"none\" stroke=\"#888\"/>"
        );
        let _ = writeln!(out, "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{hi}</text>", LEFT - 6.0, top + 4.0);
        let _ = writeln!(out, "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{lo}</text>", LEFT - 6.0, top + PANEL + 4.0);
    }
    if let (Some(first), Some(last)) = (snapshots.first(), snapshots.last()) {
        let base = TOP2 + PANEL + 18.0;
        let _ = writeln!(out, "<text x=\"{LEFT}\" y=\"{base}\" text-anchor=\"middle\">{}</text>", first.episode);
        let _ = writeln!(out, "<text x=\"{:.2}\" y=\"{base}\" text-anchor=\"middle\">{}</text>", LEFT + plot_w, last.episode);
        let _ = writeln!(out, "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">episode</text>", LEFT + plot_w / 2.0, base + 16.0);
    }

    let y = |top: f64, lo: f64, hi: f64, v: f64| top + PANEL - (v - lo) / (hi - lo) * PANEL;
    // (label, colour, values, panel top, lower bound, upper bound)
    let mut series: Vec<Series> = Vec::new();
    for (i, c) in candidates.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        series.push((format!("{c} share"), color, snapshots.iter().map(|s| s.vote_share.get(c).copied()).collect(), TOP1, 0.0, 1.0));
    }
    series.push((
        format!("{UNDECIDED} share"),
        "#000000",
        snapshots.iter().map(|s| s.vote_share.get(UNDECIDED).copied()).collect(),
        TOP1,
        0.0,
        1.0,
    ));
    for (i, c) in candidates.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        series.push((
            format!("{c} favorability"),
            color,
            snapshots.iter().map(|s| s.mean_favorability.get(c).copied().flatten()).collect(),
            TOP2,
            1.0,
            10.0,
        ));
    }
    for (k, (label, color, values, top, lo, hi)) in series.iter().enumerate() {
        let points: Vec<String> = values
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| format!("{:.2},{:.2}", x(i), y(*top, *lo, *hi, v))))
            .collect();
        let _ = writeln!(
            out,
            "<polyline data-series=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>",
            xml_escape(label),
            points.join(" ")
        );
        let ly = 50.0 + 18.0 * k as f64;
        let lx = W - RIGHT + 15.0;
        let _ = writeln!(out, "<line x1=\"{lx}\" y1=\"{ly}\" x2=\"{:.2}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>", lx + 20.0);
        let _ = writeln!(out, "<text x=\"{:.2}\" y=\"{:.2}\">{}</text>", lx + 26.0, ly + 4.0, xml_escape(label));
    }
    out.push_str("</svg>\n");
    out
}

fn write(path: &Path, contents: &[u8]) -> Result<(), ExportError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| ExportError::Io { path: parent.to_path_buf(), source })?;
    }
    std::fs::write(path, contents).map_err(|source| ExportError::Io { path: path.to_path_buf(), source })
}

fn jsonl<T: serde::Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("artifact serializes"));
        out.push('\n');
    }
    out
}

/// Writes the requested formats under `out_dir` and returns the files
/// written, relative to `out_dir`. Identical artifacts give identical bytes.
pub fn export(artifacts: &RunArtifacts, out_dir: &Path, formats: &[ExportFormat]) -> Result<Vec<PathBuf>, ExportError> {
    let candidates = artifacts.config.candidate_names();
    let mut written = Vec::new();
    let mut put = |rel: PathBuf, contents: &[u8]| {
        write(&out_dir.join(&rel), contents)?;
        written.push(rel);
        Ok::<_, ExportError>(())
    };
    let mut formats = formats.to_vec();
    formats.sort();
    formats.dedup();
    for format in formats {
        match format {
            ExportFormat::Survey => put("survey.csv".into(), survey_csv(&artifacts.surveys, &candidates).as_bytes())?,
            ExportFormat::Analytics => {
                put("analytics.csv".into(), analytics_csv(&artifacts.analytics, &candidates).as_bytes())?
            }
            ExportFormat::Gexf => {
                for snap in &artifacts.analytics {
                    let rel = PathBuf::from("graphs").join(format!("episode_{:02}.gexf", snap.episode));
                    put(rel, render_gexf(artifacts, snap).as_bytes())?;
                }
            }
            ExportFormat::Svg => {
                put("chart.svg".into(), render_chart_svg(&artifacts.analytics, &candidates).as_bytes())?
            }
            ExportFormat::Events => put("events.jsonl".into(), jsonl(&artifacts.events).as_bytes())?,
            ExportFormat::Transcript => put("transcript.jsonl".into(), jsonl(&artifacts.transcript).as_bytes())?,
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::Vote;
    use crate::platform::AccountId;
    use crate::scenario::AgentRole;
    use std::collections::BTreeMap;

    fn snap(episode: u32, bill: f64) -> AnalyticsSnapshot {
        let c = ["Bill Fredrickson", "Bradley Carter"];
        AnalyticsSnapshot {
            episode,
            respondents: 10,
            vote_share: BTreeMap::from([(c[0].into(), bill), (c[1].into(), 1.0 - bill), (UNDECIDED.into(), 0.0)]),
            mean_favorability: BTreeMap::from([(c[0].into(), Some(6.5)), (c[1].into(), None)]),
            activity_counts: EventKind::ALL.iter().map(|k| (*k, 1)).collect(),
            candidate_mentions: BTreeMap::new(),
            follow_edges: vec![(AccountId::from("1"), AccountId::from("2"))],
            active_accounts: vec![AccountId::from("1")],
        }
    }

    fn cands() -> Vec<String> {
        vec!["Bill Fredrickson".into(), "Bradley Carter".into()]
    }

    #[test]
    fn chart_has_one_x_position_per_episode() {
        let snaps: Vec<_> = (0..48).map(|e| snap(e, e as f64 / 47.0)).collect();
        let svg = render_chart_svg(&snaps, &cands());
        let first = svg.lines().find(|l| l.contains("data-series=\"Bill Fredrickson share\"")).unwrap();
        let points = first.split("points=\"").nth(1).unwrap().trim_end_matches("\"/>");
        assert_eq!(points.split(' ').count(), 48);
        // Missing means draw nothing.
        let bradley = svg.lines().find(|l| l.contains("Bradley Carter favorability\" fill")).unwrap();
        assert!(bradley.contains("points=\"\""));
        assert_eq!(svg, render_chart_svg(&snaps, &cands()));
    }

    #[test]
    fn survey_table_layout() {
        let r = SurveyRecord {
            episode: 3,
            agent: "Ann, Jr".into(),
            role: AgentRole::Voter,
            vote: Vote::Undecided,
            favorability: BTreeMap::from([("Bill Fredrickson".into(), Some(4)), ("Bradley Carter".into(), None)]),
            backend_error: false,
        };
        let text = survey_csv(&[r], &cands());
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "episode,agent,role,vote,fav:Bill Fredrickson,fav:Bradley Carter,backend_error");
        assert_eq!(lines.next().unwrap(), "3,\"Ann, Jr\",voter,undecided,4,,false");
    }

    #[test]
    fn analytics_table_has_every_kind() {
        let text = analytics_csv(&[snap(0, 0.25)], &cands());
        let header = text.lines().next().unwrap();
        for k in EventKind::ALL {
            assert!(header.contains(&format!("count:{}", k.as_str())));
        }
        assert!(text.lines().nth(1).unwrap().starts_with("0,10,0.25,0.75,0,6.5,,"));
    }

    #[test]
    fn format_names() {
        assert_eq!("GEXF".parse::<ExportFormat>().unwrap(), ExportFormat::Gexf);
        assert!("pdf".parse::<ExportFormat>().is_err());
    }
}
