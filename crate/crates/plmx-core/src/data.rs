//! Labeled-dataset ingestion: the 5-class sentiment label space, TSV
//! parsing, split statistics, and inter-annotator agreement.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// The five sentiment classes. "neutral" in raw data maps onto
/// [`Label::UnknownState`]; "not-tamil"/"not-malayalam" map onto
/// [`Label::OtherLanguage`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Positive,
    Negative,
    MixedFeelings,
    UnknownState,
    OtherLanguage,
}

/// Which code-mixed pair a dataset belongs to; only affects how
/// [`Label::OtherLanguage`] is spelled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Language {
    TamilEnglish,
    MalayalamEnglish,
}

impl Language {
    pub fn tag(self) -> &'static str {
        match self {
            Language::TamilEnglish => "tamil-english",
            Language::MalayalamEnglish => "malayalam-english",
        }
    }

    /// Dataset name as it appears in result tables.
    pub fn display(self) -> &'static str {
        match self {
            Language::TamilEnglish => "Tamil-English",
            Language::MalayalamEnglish => "Malayalam-English",
        }
    }

    /// The "not in this language" class name, e.g. "not-tamil".
    pub fn other_label(self) -> &'static str {
        match self {
            Language::TamilEnglish => "not-tamil",
            Language::MalayalamEnglish => "not-malayalam",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tamil-english" | "tamil" => Ok(Language::TamilEnglish),
            "malayalam-english" | "malayalam" => Ok(Language::MalayalamEnglish),
            other => Err(Error::Parse(format!(
                "unknown language {other:?}, expected tamil-english or malayalam-english"
            ))),
        }
    }
}

impl Label {
    /// All five classes in classifier-output order.
    pub const ALL: [Label; 5] = [
        Label::Positive,
        Label::Negative,
        Label::MixedFeelings,
        Label::UnknownState,
        Label::OtherLanguage,
    ];

    /// Classifier class index.
    pub fn index(self) -> usize {
        match self {
            Label::Positive => 0,
            Label::Negative => 1,
            Label::MixedFeelings => 2,
            Label::UnknownState => 3,
            Label::OtherLanguage => 4,
        }
    }

    pub fn from_index(i: usize) -> Result<Label> {
        Label::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::Index(format!("label index {i} out of range")))
    }

    /// Canonical machine-readable name, loadable back by
    /// [`normalize_label`].
    pub fn canonical(self, language: Language) -> &'static str {
        match self {
            Label::Positive => "Positive",
            Label::Negative => "Negative",
            Label::MixedFeelings => "Mixed_feelings",
            Label::UnknownState => "unknown_state",
            Label::OtherLanguage => language.other_label(),
        }
    }

    /// Human-readable name used in rendered result tables.
    pub fn display(self, language: Language) -> &'static str {
        match self {
            Label::Positive => "Positive",
            Label::Negative => "Negative",
            Label::MixedFeelings => "Mixed feelings",
            Label::UnknownState => "unknown state",
            Label::OtherLanguage => language.other_label(),
        }
    }

    /// Row order of result tables: Mixed feelings, Negative, Positive,
    /// not-<language>, unknown state.
    pub const TABLE_ORDER: [Label; 5] = [
        Label::MixedFeelings,
        Label::Negative,
        Label::Positive,
        Label::OtherLanguage,
        Label::UnknownState,
    ];
}

/// Case-insensitive, underscore/space-insensitive mapping from a raw label
/// string onto the 5-class space. "neutral" is accepted as UnknownState
/// with a warning, since the source data uses both names for one class.
pub fn normalize_label(raw: &str) -> Result<Label> {
    let mut norm = String::with_capacity(raw.len());
    for c in raw.trim().chars() {
        let c = if c == '_' { ' ' } else { c };
        norm.extend(c.to_lowercase());
    }
    // collapse runs of spaces
    let norm = norm.split_whitespace().collect::<Vec<_>>().join(" ");
    match norm.as_str() {
        "positive" => Ok(Label::Positive),
        "negative" => Ok(Label::Negative),
        "mixed feelings" => Ok(Label::MixedFeelings),
        "unknown state" => Ok(Label::UnknownState),
        "neutral" => {
            log::warn!("label \"neutral\" mapped to unknown_state");
            Ok(Label::UnknownState)
        }
        "not-tamil" | "not tamil" | "not-malayalam" | "not malayalam" => Ok(Label::OtherLanguage),
        _ => Err(Error::Label(format!("unknown label {raw:?}"))),
    }
}

/// One comment with its gold label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledExample {
    text: String,
    label: Label,
}

impl LabeledExample {
    /// Trims the text, replaces any embedded tabs with single spaces (with
    /// a warning, so TSV output stays two-column), and rejects text that is
    /// empty after trimming.
    pub fn new(text: &str, label: Label) -> Result<Self> {
        let mut text = text.trim().to_string();
        if text.contains('\t') {
            log::warn!("embedded tab in example text replaced with space");
            text = text.replace('\t', " ");
        }
        if text.is_empty() {
            return Err(Error::Data("example text is empty after trimming".into()));
        }
        Ok(LabeledExample { text, label })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn label(&self) -> Label {
        self.label
    }
}

/// Parses `text<TAB>label` lines. Blank lines are skipped; an optional
/// `text<TAB>category` header is skipped; all errors carry line numbers.
pub fn parse_tsv(content: &str) -> Result<Vec<LabeledExample>> {
    let content = content.strip_prefix('\u{feff}').unwrap_or(content);
    let mut out = Vec::new();
    for (i, raw_line) in content.lines().enumerate() {
        let lineno = i + 1;
        let line = raw_line.strip_suffix('\r').unwrap_or(raw_line);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if out.is_empty()
            && fields.len() == 2
            && fields[0].trim().eq_ignore_ascii_case("text")
            && fields[1].trim().eq_ignore_ascii_case("category")
        {
            continue; // header
        }
        if fields.len() != 2 {
            return Err(Error::Parse(format!(
                "line {lineno}: expected 2 tab-separated fields, got {}",
                fields.len()
            )));
        }
        let label = normalize_label(fields[1])
            .map_err(|e| Error::Label(format!("line {lineno}: {e}")))?;
        let example = LabeledExample::new(fields[0], label)
            .map_err(|e| Error::Data(format!("line {lineno}: {e}")))?;
        out.push(example);
    }
    Ok(out)
}

/// Train/validation/test partitions of one language's data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitDataset {
    pub train: Vec<LabeledExample>,
    pub validation: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    pub language: Language,
}

/// Per-split totals and per-class counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitStats {
    /// (split name, total, counts aligned with [`Label::TABLE_ORDER`]).
    pub rows: Vec<(&'static str, usize, [usize; 5])>,
    pub language: Language,
}

pub fn split_stats(dataset: &SplitDataset) -> SplitStats {
    let count = |examples: &[LabeledExample]| {
        let mut counts = [0usize; 5];
        for ex in examples {
            let slot = Label::TABLE_ORDER
                .iter()
                .position(|&l| l == ex.label())
                .expect("label in table order");
            counts[slot] += 1;
        }
        counts
    };
    SplitStats {
        rows: alloc::vec![
            ("Training", dataset.train.len(), count(&dataset.train)),
            ("Validation", dataset.validation.len(), count(&dataset.validation)),
            ("Testing", dataset.test.len(), count(&dataset.test)),
        ],
        language: dataset.language,
    }
}

impl SplitStats {
    /// Plain-text table: one row per split, a total column, and one column
    /// per class.
    pub fn render(&self) -> String {
        let mut header = alloc::vec!["Split".to_string(), "Total".to_string()];
        for label in Label::TABLE_ORDER {
            header.push(label.display(self.language).to_string());
        }
        let mut rows = alloc::vec![header];
        for (name, total, counts) in &self.rows {
            let mut row = alloc::vec![name.to_string(), total.to_string()];
            for c in counts {
                row.push(c.to_string());
            }
            rows.push(row);
        }
        render_pipe_table(&rows)
    }
}

/// Renders rows as a `|`-separated table with padded columns.
pub(crate) fn render_pipe_table(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let mut widths = alloc::vec![0usize; cols];
    for row in rows {
        for (j, cell) in row.iter().enumerate() {
            widths[j] = widths[j].max(cell.chars().count());
        }
    }
    let mut out = String::new();
    for row in rows {
        out.push('|');
        for j in 0..cols {
            let cell = row.get(j).map(String::as_str).unwrap_or("");
            out.push(' ');
            out.push_str(cell);
            for _ in cell.chars().count()..widths[j] {
                out.push(' ');
            }
            out.push_str(" |");
        }
        out.push('\n');
    }
    out
}

// ── Inter-annotator agreement ───────────────────────────────────────────

/// Items × annotators grid of optional nominal codes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationMatrix {
    rows: Vec<Vec<Option<String>>>,
}

impl AnnotationMatrix {
    pub fn new(rows: Vec<Vec<Option<String>>>) -> Result<Self> {
        if !rows.iter().any(|r| r.iter().flatten().count() >= 2) {
            return Err(Error::Data(
                "annotation matrix needs at least one item with 2+ codes".into(),
            ));
        }
        Ok(AnnotationMatrix { rows })
    }

    /// Parses annotation TSV: one item per row, one annotator per column,
    /// empty cell = missing.
    pub fn parse_tsv(content: &str) -> Result<Self> {
        let content = content.strip_prefix('\u{feff}').unwrap_or(content);
        let mut rows = Vec::new();
        for raw_line in content.lines() {
            let line = raw_line.strip_suffix('\r').unwrap_or(raw_line);
            if line.trim().is_empty() {
                continue;
            }
            let row: Vec<Option<String>> = line
                .split('\t')
                .map(|cell| {
                    let cell = cell.trim();
                    if cell.is_empty() { None } else { Some(cell.to_string()) }
                })
                .collect();
            rows.push(row);
        }
        AnnotationMatrix::new(rows)
    }

    pub fn rows(&self) -> &[Vec<Option<String>>] {
        &self.rows
    }
}

/// Krippendorff's alpha with the nominal distance metric:
/// `1 - D_o/D_e`, where D_o is the fraction of disagreeing ordered pairs of
/// codes within items (items with fewer than 2 codes excluded) and D_e is
/// the disagreement expected when drawing code pairs from the pooled value
/// distribution. Pooled pairs are drawn with replacement, which makes alpha
/// exactly invariant under duplicating the full item set.
pub fn krippendorff_alpha(matrix: &AnnotationMatrix) -> Result<f64> {
    let mut pairable_items: Vec<Vec<&str>> = Vec::new();
    for row in matrix.rows() {
        let codes: Vec<&str> = row.iter().flatten().map(String::as_str).collect();
        if codes.len() >= 2 {
            pairable_items.push(codes);
        }
    }
    if pairable_items.is_empty() {
        return Err(Error::Data("no item has 2 or more codes; alpha is undefined".into()));
    }

    let mut within_pairs = 0u64;
    let mut within_disagreements = 0u64;
    let mut pooled: Vec<&str> = Vec::new();
    for codes in &pairable_items {
        let m = codes.len() as u64;
        within_pairs += m * (m - 1);
        for (i, a) in codes.iter().enumerate() {
            for (j, b) in codes.iter().enumerate() {
                if i != j && a != b {
                    within_disagreements += 1;
                }
            }
        }
        pooled.extend(codes.iter().copied());
    }
    let observed = within_disagreements as f64 / within_pairs as f64;

    let n = pooled.len() as f64;
    let mut value_counts: alloc::collections::BTreeMap<&str, u64> =
        alloc::collections::BTreeMap::new();
    for code in &pooled {
        *value_counts.entry(code).or_insert(0) += 1;
    }
    let same_fraction: f64 =
        value_counts.values().map(|&c| (c as f64 / n) * (c as f64 / n)).sum();
    let expected = 1.0 - same_fraction;

    if expected == 0.0 {
        // all codes identical: perfect agreement by convention
        return Ok(1.0);
    }
    Ok(1.0 - observed / expected)
}
