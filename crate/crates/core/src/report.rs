//! Figure-ready metric tables and case bundles computed from run records.
//!
//! Every table is CSV with a header row, models in short-name order,
//! tasks in BSC, TSC, SCS, LCS order and real numbers printed with four
//! decimals, so output is byte-stable for a given set of records.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::{
    aggregate_by_sample, comp_by_sample, cross_model_vote, neutral_set_scs_lcs, neutral_set_tsc, AggregateLabel,
    AggregateValue,
};
use crate::corpus::{Corpus, GoldLabel};
use crate::metrics::alpha::{krippendorff_alpha, AlphaError, RatingsMatrix};
use crate::metrics::confusion::{confusion_stats, ConfusionStats};
use crate::metrics::neutral::{min_set_jaccard, neutral_gt_proportions};
use crate::metrics::nll::{nll_summary, NllStatistic};
use crate::metrics::similarity::{group_by_sample, rationale_consistency, SimilarityError, TextSimilarity};
use crate::parser::{Label, ModelJudgment, ParseStatus};
use crate::prompt::TaskKind;
use crate::runstore::{CellOutcome, RunRecord};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("run has no records")]
    EmptyRun,
    #[error("record for sample {0:?} has no gold label in the run corpus")]
    UnknownSample(String),
    #[error("rationale similarity: {0}")]
    Similarity(#[from] SimilarityError),
    #[error("writing {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Classification methods scored against the gold labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    Task(TaskKind),
    Comp,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Task(TaskKind::Bsc),
        Method::Task(TaskKind::Tsc),
        Method::Task(TaskKind::Scs),
        Method::Task(TaskKind::Lcs),
        Method::Comp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Task(t) => t.as_str(),
            Method::Comp => "COMP",
        }
    }
}

fn f4(x: f64) -> String {
    format!("{x:.4}")
}

fn opt4(x: Option<f64>) -> String {
    x.map(f4).unwrap_or_default()
}

/// Judgments of a run, grouped by model.
#[derive(Debug, Clone)]
pub struct RunView {
    by_model: BTreeMap<String, Vec<ModelJudgment>>,
    gold: BTreeMap<String, GoldLabel>,
    exhausted: BTreeMap<(String, TaskKind), usize>,
}

impl RunView {
    pub fn new(records: &[RunRecord], gold: BTreeMap<String, GoldLabel>) -> Result<Self, ReportError> {
        if records.is_empty() {
            return Err(ReportError::EmptyRun);
        }
        let mut by_model: BTreeMap<String, Vec<ModelJudgment>> = BTreeMap::new();
        let mut exhausted = BTreeMap::new();
        for r in records {
            if !gold.contains_key(&r.key.sample_id) {
                return Err(ReportError::UnknownSample(r.key.sample_id.clone()));
            }
            by_model
                .entry(r.key.model.clone())
                .or_default()
                .push(r.judgment.clone());
            if r.outcome == CellOutcome::Exhausted {
                *exhausted.entry((r.key.model.clone(), r.key.task)).or_default() += 1;
            }
        }
        for js in by_model.values_mut() {
            js.sort_by(|a, b| (a.task, &a.sample_id, a.variant_id).cmp(&(b.task, &b.sample_id, b.variant_id)));
        }
        Ok(RunView {
            by_model,
            gold,
            exhausted,
        })
    }

    pub fn models(&self) -> impl Iterator<Item = &str> {
        self.by_model.keys().map(String::as_str)
    }

    pub fn judgments(&self, model: &str) -> &[ModelJudgment] {
        self.by_model.get(model).map(Vec::as_slice).unwrap_or(&[])
    }

    fn task_judgments(&self, model: &str, task: TaskKind) -> Vec<ModelJudgment> {
        self.judgments(model)
            .iter()
            .filter(|j| j.task == task)
            .cloned()
            .collect()
    }

    pub fn gold(&self) -> &BTreeMap<String, GoldLabel> {
        &self.gold
    }

    /// Variant-level classification consistency for one (model, task).
    /// Raters are prompt variants, units are samples; missing judgments are
    /// absent cells.
    pub fn alpha(&self, model: &str, task: TaskKind) -> Result<f64, AlphaError> {
        let mut m = RatingsMatrix::new(Label::allowed_for(task).iter().copied());
        for j in self.task_judgments(model, task) {
            m.add_unit(&j.sample_id);
            if !j.is_missing() {
                m.set(&j.variant_id.to_string(), &j.sample_id, j.label)?;
            }
        }
        krippendorff_alpha(&m)
    }

    pub fn aggregate(&self, model: &str, method: Method) -> BTreeMap<String, AggregateLabel> {
        match method {
            Method::Task(t) => aggregate_by_sample(self.judgments(model), t),
            Method::Comp => comp_by_sample(self.judgments(model)),
        }
    }

    pub fn confusion(&self, model: &str, method: Method) -> ConfusionStats {
        let predicted: BTreeMap<String, AggregateValue> = self
            .aggregate(model, method)
            .into_iter()
            .map(|(k, v)| (k, v.value))
            .collect();
        confusion_stats(&predicted, &self.gold).expect("gold checked at construction")
    }

    /// Cross-model majority per sample for one method.
    pub fn cross_model(&self, method: Method) -> BTreeMap<String, AggregateLabel> {
        let mut per_sample: BTreeMap<String, BTreeMap<String, AggregateValue>> = BTreeMap::new();
        for model in self.by_model.keys() {
            for (sample, agg) in self.aggregate(model, method) {
                per_sample.entry(sample).or_default().insert(model.clone(), agg.value);
            }
        }
        per_sample
            .into_iter()
            .map(|(s, votes)| (s, cross_model_vote(&votes)))
            .collect()
    }

    pub fn neutral_tsc(&self, model: &str) -> BTreeSet<String> {
        neutral_set_tsc(&self.task_judgments(model, TaskKind::Tsc))
    }

    pub fn neutral_scs_lcs(&self, model: &str) -> BTreeSet<String> {
        let js: Vec<ModelJudgment> = self
            .judgments(model)
            .iter()
            .filter(|j| matches!(j.task, TaskKind::Scs | TaskKind::Lcs))
            .cloned()
            .collect();
        neutral_set_scs_lcs(&js)
    }
}

/// Rendered tables keyed by file name.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MetricTables {
    pub files: BTreeMap<String, String>,
}

impl MetricTables {
    pub fn get(&self, name: &str) -> Option<&str> {
        self.files.get(name).map(String::as_str)
    }

    pub fn write_to(&self, dir: &Path) -> Result<(), ReportError> {
        let io = |p: &Path| {
            let path = p.display().to_string();
            move |source| ReportError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        for (name, body) in &self.files {
            let p = dir.join(name);
            fs::write(&p, body).map_err(io(&p))?;
        }
        Ok(())
    }
}

fn alpha_cell(r: &Result<f64, AlphaError>) -> (String, &'static str) {
    match r {
        Ok(a) => (f4(*a), "ok"),
        Err(AlphaError::Degenerate { .. }) => (String::new(), "degenerate"),
        Err(AlphaError::NoPairableUnits) => (String::new(), "no_pairable_units"),
        Err(AlphaError::UnknownCategory(_)) => (String::new(), "invalid"),
    }
}

fn confusion_row(out: &mut String, prefix: &str, s: &ConfusionStats) {
    let p = s.proportions();
    let pc = |i: usize| p.map(|p| f4(p[i])).unwrap_or_default();
    writeln!(
        out,
        "{prefix},{},{},{},{},{},{},{},{},{},{},{}",
        s.tp,
        s.fp,
        s.tn,
        s.fn_,
        s.n_excluded_neutral,
        s.n_excluded_undefined,
        opt4(s.correctness),
        pc(0),
        pc(1),
        pc(2),
        pc(3)
    )
    .unwrap();
}

const CONFUSION_HEADER: &str = "tp,fp,tn,fn,excluded_neutral,excluded_undefined,correctness,p_tp,p_fp,p_tn,p_fn";

/// Computes every metric table for a run.
pub fn compute_tables<S: TextSimilarity + ?Sized>(view: &RunView, similarity: &S) -> Result<MetricTables, ReportError> {
    let mut files = BTreeMap::new();
    let models: Vec<&str> = view.models().collect();

    // Parse and ladder bookkeeping.
    let mut cells = String::from("model,task,ok,repaired,failed,exhausted\n");
    for m in &models {
        for t in TaskKind::ALL {
            let js = view.task_judgments(m, t);
            let count = |st: ParseStatus| js.iter().filter(|j| j.parse_status == st).count();
            let ex = view.exhausted.get(&(m.to_string(), t)).copied().unwrap_or(0);
            writeln!(
                cells,
                "{m},{t},{},{},{},{ex}",
                count(ParseStatus::Ok),
                count(ParseStatus::Repaired),
                count(ParseStatus::Failed)
            )
            .unwrap();
        }
    }
    files.insert("cells.csv".to_string(), cells);

    // Classification consistency.
    let mut alpha_long = String::from("model,task,alpha,status\n");
    let mut heat = String::from("model,BSC,TSC,SCS,LCS\n");
    for m in &models {
        let mut row = vec![m.to_string()];
        for t in TaskKind::ALL {
            let r = view.alpha(m, t);
            let (val, status) = alpha_cell(&r);
            writeln!(alpha_long, "{m},{t},{val},{status}").unwrap();
            row.push(if status == "ok" { val } else { status.to_string() });
        }
        writeln!(heat, "{}", row.join(",")).unwrap();
    }
    files.insert("alpha.csv".to_string(), alpha_long);
    files.insert("alpha_heatmap.csv".to_string(), heat);

    // Rationale consistency, per task and pooled per model.
    let mut rc = String::from("model,task,mean,stdev,n_pairs\n");
    let mut rc_model =
        String::from("model,mean_of_task_means,stdev_across_tasks,n_tasks,pooled_mean,pooled_stdev,n_pairs\n");
    for m in &models {
        let mut task_means = Vec::new();
        let mut all_groups: Vec<Vec<ModelJudgment>> = Vec::new();
        for t in TaskKind::ALL {
            let groups = group_by_sample(&view.task_judgments(m, t));
            let r = rationale_consistency(groups.values().map(Vec::as_slice), similarity)?;
            writeln!(rc, "{m},{t},{},{},{}", opt4(r.mean), opt4(r.stdev), r.n_pairs).unwrap();
            task_means.extend(r.mean);
            all_groups.extend(groups.into_values());
        }
        let pooled = rationale_consistency(all_groups.iter().map(Vec::as_slice), similarity)?;
        let (mean_tasks, sd_tasks) = if task_means.is_empty() {
            (None, None)
        } else {
            let n = task_means.len() as f64;
            let mu = task_means.iter().sum::<f64>() / n;
            let var = task_means.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n;
            (Some(mu), Some(var.sqrt()))
        };
        writeln!(
            rc_model,
            "{m},{},{},{},{},{},{}",
            opt4(mean_tasks),
            opt4(sd_tasks),
            task_means.len(),
            opt4(pooled.mean),
            opt4(pooled.stdev),
            pooled.n_pairs
        )
        .unwrap();
    }
    files.insert("rationale_consistency.csv".to_string(), rc);
    files.insert("rationale_consistency_by_model.csv".to_string(), rc_model);

    // Agreement with ground truth.
    let mut conf = format!("model,method,{CONFUSION_HEADER}\n");
    for m in &models {
        for method in Method::ALL {
            confusion_row(
                &mut conf,
                &format!("{m},{}", method.as_str()),
                &view.confusion(m, method),
            );
        }
    }
    files.insert("confusion.csv".to_string(), conf);

    let mut agg = format!("method,{CONFUSION_HEADER}\n");
    for method in Method::ALL {
        let predicted: BTreeMap<String, AggregateValue> = view
            .cross_model(method)
            .into_iter()
            .map(|(k, v)| (k, v.value))
            .collect();
        let s = confusion_stats(&predicted, view.gold()).expect("gold checked at construction");
        confusion_row(&mut agg, method.as_str(), &s);
    }
    files.insert("confusion_aggregated.csv".to_string(), agg);

    // Confidence.
    let mut nll = String::from("model,task,label,statistic,n,mean,median,q1,q3,min,max\n");
    for m in &models {
        for stat in [NllStatistic::Sum, NllStatistic::PerToken] {
            for ((t, l), g) in nll_summary(view.judgments(m), stat) {
                writeln!(
                    nll,
                    "{m},{t},{l},{},{},{},{},{},{},{},{}",
                    stat.as_str(),
                    g.n,
                    f4(g.mean),
                    f4(g.median),
                    f4(g.q1),
                    f4(g.q3),
                    f4(g.min),
                    f4(g.max)
                )
                .unwrap();
            }
        }
    }
    files.insert("nll.csv".to_string(), nll);

    // Neutral samples.
    let mut neutral = String::from("model,n_tsc,n_scs_lcs,n_overlap,msno\n");
    let mut gt = String::from("model,method,n,p_sarcastic,p_non_sarcastic\n");
    let mut pairwise = String::from("method,model_a,model_b,msno\n");
    let mut tsc_sets = BTreeMap::new();
    let mut sl_sets = BTreeMap::new();
    for m in &models {
        let tsc = view.neutral_tsc(m);
        let sl = view.neutral_scs_lcs(m);
        let overlap = tsc.intersection(&sl).count();
        writeln!(
            neutral,
            "{m},{},{},{overlap},{}",
            tsc.len(),
            sl.len(),
            opt4(min_set_jaccard(&tsc, &sl).ok())
        )
        .unwrap();
        for (name, set) in [("TSC", &tsc), ("SCS-LCS", &sl)] {
            match neutral_gt_proportions(set, view.gold()) {
                Ok(p) => writeln!(gt, "{m},{name},{},{},{}", p.n, f4(p.p_sarcastic), f4(p.p_non_sarcastic)),
                Err(_) => writeln!(gt, "{m},{name},0,,"),
            }
            .unwrap();
        }
        tsc_sets.insert(m.to_string(), tsc);
        sl_sets.insert(m.to_string(), sl);
    }
    let intersect_all = |sets: &BTreeMap<String, BTreeSet<String>>| -> BTreeSet<String> {
        let mut it = sets.values();
        let first = it.next().cloned().unwrap_or_default();
        it.fold(first, |acc, s| acc.intersection(s).cloned().collect())
    };
    let all_tsc = intersect_all(&tsc_sets);
    let all_sl = intersect_all(&sl_sets);
    writeln!(
        neutral,
        "ALL,{},{},{},{}",
        all_tsc.len(),
        all_sl.len(),
        all_tsc.intersection(&all_sl).count(),
        opt4(min_set_jaccard(&all_tsc, &all_sl).ok())
    )
    .unwrap();
    for (name, sets) in [("TSC", &tsc_sets), ("SCS-LCS", &sl_sets)] {
        for (a, sa) in sets {
            for (b, sb) in sets.range::<String, _>((std::ops::Bound::Excluded(a), std::ops::Bound::Unbounded)) {
                writeln!(pairwise, "{name},{a},{b},{}", opt4(min_set_jaccard(sa, sb).ok())).unwrap();
            }
        }
    }
    files.insert("neutral.csv".to_string(), neutral);
    files.insert("neutral_gt.csv".to_string(), gt);
    files.insert("neutral_msno_pairwise.csv".to_string(), pairwise);

    Ok(MetricTables { files })
}

/// Short Markdown overview: correctness per model and method, and the
/// consistency heatmap.
pub fn summary_markdown(view: &RunView) -> String {
    let mut out = String::from("## Correctness (definitive predictions only)\n\n| model |");
    for m in Method::ALL {
        write!(out, " {} |", m.as_str()).unwrap();
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(Method::ALL.len()));
    out.push('\n');
    let models: Vec<&str> = view.models().collect();
    for m in &models {
        write!(out, "| {m} |").unwrap();
        for method in Method::ALL {
            let s = view.confusion(m, method);
            write!(out, " {} |", s.correctness.map(f4).unwrap_or_else(|| "-".into())).unwrap();
        }
        out.push('\n');
    }
    out.push_str(
        "\n## Classification consistency (alpha)\n\n| model | BSC | TSC | SCS | LCS |\n|---|---|---|---|---|\n",
    );
    for m in &models {
        write!(out, "| {m} |").unwrap();
        for t in TaskKind::ALL {
            let (v, status) = alpha_cell(&view.alpha(m, t));
            write!(out, " {} |", if status == "ok" { v } else { status.to_string() }).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Which samples to export for side-by-side inspection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CaseFilter {
    /// At least two models reach different defined BSC majority labels.
    BscDisagreement,
    /// Some model's TSC majority label is neutral.
    TscNeutral,
    /// Some model's SCS and LCS majority labels conflict.
    ScsLcsNeutral,
    /// Every sample with records.
    All,
}

#[derive(Debug, Error)]
#[error("unknown case filter {0:?} (expected bsc-disagreement, tsc-neutral, scs-lcs-neutral or all)")]
pub struct UnknownFilter(String);

impl FromStr for CaseFilter {
    type Err = UnknownFilter;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bsc-disagreement" => Ok(CaseFilter::BscDisagreement),
            "tsc-neutral" => Ok(CaseFilter::TscNeutral),
            "scs-lcs-neutral" => Ok(CaseFilter::ScsLcsNeutral),
            "all" => Ok(CaseFilter::All),
            _ => Err(UnknownFilter(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantOutput {
    pub variant_id: u32,
    pub label: Label,
    pub score: Option<f64>,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutputs {
    pub aggregate: AggregateValue,
    pub variants: Vec<VariantOutput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub sample_id: String,
    pub text: String,
    pub image: String,
    pub gold_label: GoldLabel,
    /// model -> task -> outputs
    pub models: BTreeMap<String, BTreeMap<TaskKind, TaskOutputs>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseBundle {
    pub filter: CaseFilter,
    pub cases: Vec<Case>,
}

fn matching_samples(view: &RunView, filter: CaseFilter) -> BTreeSet<String> {
    let models: Vec<&str> = view.models().collect();
    match filter {
        CaseFilter::All => models
            .iter()
            .flat_map(|m| view.judgments(m).iter().map(|j| j.sample_id.clone()))
            .collect(),
        CaseFilter::TscNeutral => models.iter().flat_map(|m| view.neutral_tsc(m)).collect(),
        CaseFilter::ScsLcsNeutral => models.iter().flat_map(|m| view.neutral_scs_lcs(m)).collect(),
        CaseFilter::BscDisagreement => {
            let mut seen: BTreeMap<String, BTreeSet<AggregateValue>> = BTreeMap::new();
            for m in &models {
                for (s, agg) in view.aggregate(m, Method::Task(TaskKind::Bsc)) {
                    if agg.value != AggregateValue::Undefined {
                        seen.entry(s).or_default().insert(agg.value);
                    }
                }
            }
            seen.into_iter().filter(|(_, v)| v.len() >= 2).map(|(s, _)| s).collect()
        }
    }
}

/// Side-by-side outputs for every sample matching `filter`.
pub fn export_cases(view: &RunView, corpus: &Corpus, filter: CaseFilter) -> CaseBundle {
    let ids = matching_samples(view, filter);
    let mut cases = Vec::new();
    for id in ids {
        let Some(sample) = corpus.get(&id) else { continue };
        let mut models = BTreeMap::new();
        for m in view.models() {
            let mut tasks = BTreeMap::new();
            for t in TaskKind::ALL {
                let variants: Vec<VariantOutput> = view
                    .judgments(m)
                    .iter()
                    .filter(|j| j.task == t && j.sample_id == id)
                    .map(|j| VariantOutput {
                        variant_id: j.variant_id,
                        label: j.label,
                        score: j.score,
                        rationale: j.rationale.clone(),
                    })
                    .collect();
                if variants.is_empty() {
                    continue;
                }
                let aggregate = view
                    .aggregate(m, Method::Task(t))
                    .get(&id)
                    .map(|a| a.value)
                    .unwrap_or(AggregateValue::Undefined);
                tasks.insert(t, TaskOutputs { aggregate, variants });
            }
            if !tasks.is_empty() {
                models.insert(m.to_string(), tasks);
            }
        }
        cases.push(Case {
            sample_id: id,
            text: sample.text.clone(),
            image: sample.image.display_ref(),
            gold_label: sample.gold_label,
            models,
        });
    }
    CaseBundle { filter, cases }
}
