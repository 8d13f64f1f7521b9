//! Scripted worlds for offline runs.
//!
//! One chat script and one fixture corpus serve the three walkthrough cases,
//! the 20-item synthetic suite, the five-item smoke set and the paired
//! memory set. All page text is synthetic; it only mimics the shape of the
//! sources the cases describe.
//!
//! Item kinds decide what the world does to a default machine:
//!
//! * `verify` items: the first search only finds a general overview, so the
//!   default search/browse loop spins until loop detection. A verifier state
//!   that refines the query to `"<question> official report"` finds the page
//!   with the answer.
//! * `precision` items: the page holds a qualitative summary and the exact
//!   figures. Browsing only extracts the figures once its instruction asks
//!   for exact values.
//! * `easy` items: the first page answers the question.

use std::path::Path;

use serde_json::json;

use crate::backends::{BackendError, Backends, FixtureDoc, FixtureTools, ScriptedChat, SearchHit, ToolRegistry};
use crate::fsm::{serialize_config, ConditionSpec, FsmConfig, StateDef, TransitionRule};
use crate::harness::dataset::{to_jsonl, BenchmarkItem};
use crate::memory::{HashEmbedder, DEFAULT_EMBEDDING_DIM};

mod script;

pub use script::{world_rules, world_script};

const BASE_URL: &str = "https://fixtures.evofsm.test";

/// The search, browse, answer machine every scenario starts from.
pub fn default_config() -> FsmConfig {
    FsmConfig {
        version: 1,
        initial_state: "search".into(),
        states: vec![
            StateDef::new("search", "Search", "Search the web for sources that answer the query.").with_tools(["search"]),
            StateDef::new(
                "browse",
                "Browsing",
                "Open the most promising source and report what it says about the query. \
                 Say EVIDENCE_SUFFICIENT when the page answers it.",
            )
            .with_tools(["browse"]),
            StateDef::new("analysis", "Analysis", "Write the final answer from the gathered evidence.").terminal(),
        ],
        transitions: vec![
            TransitionRule::new(
                "search_to_browse",
                "search",
                "browse",
                0,
                ConditionSpec::predicate("evidence_count_at_least", vec![json!(1)]),
            ),
            TransitionRule::new("search_retry", "search", "search", 1, ConditionSpec::always()),
            TransitionRule::new(
                "browse_to_analysis",
                "browse",
                "analysis",
                0,
                ConditionSpec::predicate("last_output_contains", vec![json!("EVIDENCE_SUFFICIENT")]),
            ),
            TransitionRule::new("browse_to_search", "browse", "search", 1, ConditionSpec::always()),
        ],
        negative_constraints: vec![],
        extra: Default::default(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ItemKind {
    Verify,
    Precision,
    Easy,
}

impl ItemKind {
    pub fn label(self) -> &'static str {
        match self {
            ItemKind::Verify => "verify",
            ItemKind::Precision => "precision",
            ItemKind::Easy => "easy",
        }
    }
}

/// One synthetic question with the pages that answer it.
#[derive(Debug, Clone)]
pub struct WorldItem {
    pub id: &'static str,
    pub kind: ItemKind,
    pub question: &'static str,
    pub answer: &'static str,
    /// Qualitative gloss shown next to the figures on precision pages.
    pub vague: &'static str,
}

const fn item(id: &'static str, kind: ItemKind, question: &'static str, answer: &'static str) -> WorldItem {
    WorldItem { id, kind, question, answer, vague: "" }
}

const fn precise(id: &'static str, question: &'static str, answer: &'static str, vague: &'static str) -> WorldItem {
    WorldItem { id, kind: ItemKind::Precision, question, answer, vague }
}

use ItemKind::{Easy, Verify};

const SYNTHETIC: &[WorldItem] = &[
    item("syn-v01", Verify, "Annual rainfall total measured at Marlow Ridge weather station for 2023", "1482 mm"),
    item(
        "syn-v02",
        Verify,
        "How many nesting loggerhead turtles were counted on Calder Bay beaches during the 2023 survey",
        "312 nests",
    ),
    item("syn-v03", Verify, "Fiscal 2023 revenue reported by the Tessaly Rail freight company", "4.7 billion euros"),
    item("syn-v04", Verify, "Number of passengers handled by Orrin Field airport across calendar year 2023", "18.2 million passengers"),
    item("syn-v05", Verify, "Average wait time at Brenholm county emergency rooms in the 2023 audit", "47 minutes"),
    item("syn-v06", Verify, "Total hectares burned by wildfires in the Vesk province during summer 2023", "12600 hectares"),
    item("syn-v07", Verify, "Megawatts of offshore wind capacity commissioned by Norlund utility in 2023", "850 MW"),
    item("syn-v08", Verify, "Graduation rate published for Halvern technical institute class of 2023", "88 percent"),
    item("syn-v09", Verify, "Median home sale price recorded in Quillon township throughout 2023", "412000 dollars"),
    item("syn-v10", Verify, "Tonnes of plastic collected by the Sarova river cleanup initiative in 2023", "2140 tonnes"),
    precise(
        "syn-p01",
        "Compare peak power output of the Arclight X2 and Volter S9 solar inverters",
        "Arclight X2: 9.6 kW; Volter S9: 7.2 kW",
        "The Arclight inverter is more powerful than the Volter unit.",
    ),
    precise(
        "syn-p02",
        "Compare tensile strength of Grenmoor steel cable versus Pallis fiber rope",
        "Grenmoor cable: 1770 MPa; Pallis rope: 3400 MPa",
        "Pallis rope is stronger for its weight than Grenmoor cable.",
    ),
    precise(
        "syn-p03",
        "Compare battery life of the Loomis Tab 11 and Kestrel Pad Pro tablets",
        "Loomis Tab 11: 14 hours; Kestrel Pad Pro: 10 hours",
        "The Loomis tablet lasts longer than the Kestrel tablet.",
    ),
    precise(
        "syn-p04",
        "Compare top speed of Dravik hyperloop pod and Menza maglev train prototypes",
        "Dravik pod: 463 km/h; Menza maglev: 603 km/h",
        "The Menza maglev is faster than the Dravik pod.",
    ),
    precise(
        "syn-p05",
        "Compare caffeine content of Ostrava cold brew versus Lumen espresso shots",
        "Ostrava cold brew: 205 mg; Lumen espresso: 64 mg",
        "Ostrava cold brew has much more caffeine than Lumen espresso.",
    ),
    item("syn-e01", Easy, "Who designed the Harwick suspension bridge and in what year did it open", "Elena Strand, 1931"),
    item("syn-e02", Easy, "Height of the Corvel lighthouse above sea level", "62 meters"),
    item("syn-e03", Easy, "Founding year of the Ambry botanical society", "1874"),
    item("syn-e04", Easy, "Population of Tindle island at its last census", "2,315 residents"),
    item("syn-e05", Easy, "Catalog number of the Osric meteorite fragment at the Varn museum", "VM-4471"),
];

/// Pairs of paraphrased verify questions sharing an answer.
const PAIRED: &[(WorldItem, WorldItem)] = &[
    (
        item("pair-01a", Verify, "Annual visitor count reported for Glenmere national park in 2023", "1.3 million visitors"),
        item("pair-01b", Verify, "Glenmere national park annual visitor count reported for 2023", "1.3 million visitors"),
    ),
    (
        item("pair-02a", Verify, "Kilowatt hours generated by the Rusk dam hydro plant during 2023", "3.9 billion kWh"),
        item("pair-02b", Verify, "Rusk dam hydro plant kilowatt hours generated in 2023", "3.9 billion kWh"),
    ),
    (
        item("pair-03a", Verify, "Recorded number of dolphin sightings off Pellow point in 2023", "214 sightings"),
        item("pair-03b", Verify, "Dolphin sightings recorded off Pellow point during 2023", "214 sightings"),
    ),
    (
        item("pair-04a", Verify, "Total library loans issued by the Fennick city library system in 2023", "982000 loans"),
        item("pair-04b", Verify, "Fennick city library system total loans issued during 2023", "982000 loans"),
    ),
    (
        item("pair-05a", Verify, "Average commute length measured for Daskin metro riders in 2023", "38 minutes"),
        item("pair-05b", Verify, "Daskin metro riders average commute length measured during 2023", "38 minutes"),
    ),
];

impl WorldItem {
    pub fn benchmark_item(&self) -> BenchmarkItem {
        BenchmarkItem::new(self.id, self.question, self.answer).with_meta("kind", self.kind.label())
    }

    fn docs(&self) -> Vec<FixtureDoc> {
        let url = |slug: &str| format!("{BASE_URL}/{}/{slug}", self.id);
        let search = |query: String, title: &str, link: String| FixtureDoc::Search {
            query,
            organic: vec![SearchHit { title: title.into(), link, snippet: format!("Synthetic fixture result for {}.", self.id) }],
        };
        let page = |link: String, title: &str, content: String| FixtureDoc::Page { url: link, title: title.into(), content };
        match self.kind {
            ItemKind::Easy => vec![
                search(self.question.into(), "Reference entry", url("entry")),
                page(url("entry"), "Reference entry", format!("Synthetic reference entry.\nKEY: {}", self.answer)),
            ],
            ItemKind::Precision => vec![
                search(self.question.into(), "Comparison article", url("article")),
                page(
                    url("article"),
                    "Comparison article",
                    format!("Synthetic comparison article.\nSUMMARY: {}\nFACT: {}", self.vague, self.answer),
                ),
            ],
            ItemKind::Verify => vec![
                search(self.question.into(), "Background overview", url("overview")),
                page(
                    url("overview"),
                    "Background overview",
                    "GENERAL OVERVIEW: background material on this topic with no figures for the requested period.".into(),
                ),
                search(format!("{} official report", self.question), "Official report", url("official-report")),
                page(url("official-report"), "Official report", format!("Synthetic official report.\nKEY: {}", self.answer)),
            ],
        }
    }
}

/// The 20-item ablation suite: 10 verify, 5 precision, 5 easy.
pub fn synthetic_items() -> &'static [WorldItem] {
    SYNTHETIC
}

pub fn synthetic_suite() -> Vec<BenchmarkItem> {
    SYNTHETIC.iter().map(WorldItem::benchmark_item).collect()
}

/// Two verify, two precision and one easy item.
pub fn five_item_set() -> Vec<BenchmarkItem> {
    ["syn-v01", "syn-v02", "syn-p01", "syn-p02", "syn-e01"]
        .iter()
        .map(|id| SYNTHETIC.iter().find(|it| it.id == *id).expect("known id").benchmark_item())
        .collect()
}

pub fn paired_items() -> &'static [(WorldItem, WorldItem)] {
    PAIRED
}

/// First members of each pair, then their paraphrased twins.
pub fn paired_set() -> (Vec<BenchmarkItem>, Vec<BenchmarkItem>) {
    PAIRED.iter().map(|(a, b)| (a.benchmark_item(), b.benchmark_item())).unzip()
}

/// A walkthrough case: a query run against the default machine.
#[derive(Debug, Clone)]
pub struct Case {
    pub name: &'static str,
    pub query: &'static str,
    /// Text the evolved answer must contain.
    pub expected: &'static str,
}

pub const CASE_ADD_STATE: Case = Case {
    name: "case1",
    query: "What are the specific environmental impacts of the continuous construction of the Three Gorges Dam recorded in 2023 reports?",
    expected: "sediment retention of 34 million tonnes",
};

pub const CASE_REVISE: Case = Case {
    name: "case2",
    query: "Compare the battery energy density of the latest EV models from Tesla, BYD, and Nio launched in Q4 2023.",
    expected: "260 Wh/kg",
};

pub const CASE_SYNERGY: Case = Case {
    name: "case3",
    query: "Analyze how the EU AI Act (late 2023 draft) regulates open-source foundation models compared to proprietary ones, citing specific Articles.",
    expected: "Recital 60i and Article 53(2)",
};

pub fn cases() -> [Case; 3] {
    [CASE_ADD_STATE, CASE_REVISE, CASE_SYNERGY]
}

impl Case {
    pub fn benchmark_item(&self) -> BenchmarkItem {
        BenchmarkItem::new(self.name, self.query, self.expected)
    }
}

fn case_docs() -> Vec<FixtureDoc> {
    let hit = |title: &str, link: &str, snippet: &str| SearchHit { title: title.into(), link: link.into(), snippet: snippet.into() };
    let page = |url: &str, title: &str, content: &str| FixtureDoc::Page { url: url.into(), title: title.into(), content: content.into() };
    vec![
        FixtureDoc::Search {
            query: "Three Gorges Dam environmental impact 2023".into(),
            organic: vec![hit(
                "Three Gorges Dam - Encyclopedia",
                "https://encyclopedia.example/wiki/Three_Gorges_Dam",
                "General article on the dam and its environmental effects.",
            )],
        },
        page(
            "https://encyclopedia.example/wiki/Three_Gorges_Dam",
            "Three Gorges Dam - Encyclopedia (synthetic fixture)",
            "GENERAL OVERVIEW: construction history and environmental concerns as of 2020; no 2023 monitoring data.",
        ),
        FixtureDoc::Search {
            query: "Three Gorges Dam annual report 2023 pdf".into(),
            organic: vec![hit(
                "Three Gorges Project 2023 Environmental Monitoring Report (PDF)",
                "https://reports.example/three-gorges-2023.pdf",
                "Annual environmental monitoring bulletin for 2023.",
            )],
        },
        page(
            "https://reports.example/three-gorges-2023.pdf",
            "Three Gorges Project 2023 Environmental Monitoring Report (synthetic fixture)",
            "Synthetic fixture standing in for the 2023 annual report.\n\
             KEY: The 2023 report records sediment retention of 34 million tonnes and a 1.8 m downstream water level variation",
        ),
        FixtureDoc::Search {
            query: "EV battery energy density comparison Q4 2023".into(),
            organic: vec![hit(
                "Q4 2023 EV battery comparison",
                "https://autos.example/ev-battery-density-q4-2023",
                "Comparison of battery packs in the latest launches.",
            )],
        },
        page(
            "https://autos.example/ev-battery-density-q4-2023",
            "Q4 2023 EV battery comparison (synthetic fixture)",
            "SUMMARY: Tesla has high density, BYD uses Blade battery.\n\
             FACT: Tesla Model 3 Highland: 260 Wh/kg; BYD Seal: 150 Wh/kg",
        ),
        FixtureDoc::Search {
            query: "EU AI Act open source".into(),
            organic: vec![hit(
                "EU AI Act goes easy on open source",
                "https://news.example/eu-ai-act-open-source",
                "News coverage of the late 2023 draft.",
            )],
        },
        page(
            "https://news.example/eu-ai-act-open-source",
            "EU AI Act goes easy on open source (synthetic fixture)",
            "SUMMARY: It has exemptions for open-source models.",
        ),
        FixtureDoc::Search {
            query: "EU AI Act Article 53 exemption".into(),
            organic: vec![hit(
                "EU AI Act, consolidated text (PDF)",
                "https://law.example/eu-ai-act-2023-draft.pdf",
                "Official consolidated draft text.",
            )],
        },
        page(
            "https://law.example/eu-ai-act-2023-draft.pdf",
            "EU AI Act consolidated draft (synthetic fixture)",
            "Synthetic fixture standing in for the official draft.\n\
             KEY: Recital 60i and Article 53(2) exempt free and open-source models from documentation duties unless they pose systemic risk, while proprietary models carry them in full",
        ),
    ]
}

/// Every fixture document in the world.
pub fn world_corpus() -> Vec<FixtureDoc> {
    let mut docs = case_docs();
    for it in SYNTHETIC {
        docs.extend(it.docs());
    }
    for (a, b) in PAIRED {
        docs.extend(a.docs());
        docs.extend(b.docs());
    }
    docs
}

pub fn world_tools() -> FixtureTools {
    FixtureTools::from_docs(world_corpus())
}

/// Fresh scripted chat, fixture tools and hash embedder.
pub fn world_backends() -> Backends {
    Backends::new(
        Box::new(ScriptedChat::new(world_script()).expect("world script compiles")),
        ToolRegistry::new(Box::new(world_tools())),
        Box::new(HashEmbedder::new(DEFAULT_EMBEDDING_DIM)),
    )
}

pub const SCENARIO_NAMES: &[&str] = &["case1", "case2", "case3", "synthetic", "five-item", "paired"];

/// Writes `script.json`, `corpus/world.json`, `config.json` and the dataset
/// files for a named scenario into `dir`.
pub fn export(name: &str, dir: &Path) -> Result<Vec<std::path::PathBuf>, BackendError> {
    let (dataset, extra): (Vec<BenchmarkItem>, Option<Vec<BenchmarkItem>>) = match name {
        "case1" => (vec![CASE_ADD_STATE.benchmark_item()], None),
        "case2" => (vec![CASE_REVISE.benchmark_item()], None),
        "case3" => (vec![CASE_SYNERGY.benchmark_item()], None),
        "synthetic" => (synthetic_suite(), None),
        "five-item" => (five_item_set(), None),
        "paired" => {
            let (first, twins) = paired_set();
            (first, Some(twins))
        }
        other => {
            return Err(BackendError::InvalidInput(format!(
                "unknown scenario {other:?}; known: {}",
                SCENARIO_NAMES.join(", ")
            )))
        }
    };
    let io = |p: &Path, e: std::io::Error| BackendError::Storage(format!("{}: {e}", p.display()));
    let corpus_dir = dir.join("corpus");
    std::fs::create_dir_all(&corpus_dir).map_err(|e| io(&corpus_dir, e))?;
    let corpus = serde_json::to_string_pretty(&world_corpus()).expect("corpus serializes");
    let mut files = vec![
        (dir.join("script.json"), world_script().to_json()),
        (corpus_dir.join("world.json"), corpus),
        (dir.join("config.json"), serialize_config(&default_config())),
        (dir.join("dataset.jsonl"), to_jsonl(&dataset)),
    ];
    if let Some(twins) = extra {
        files.push((dir.join("dataset_twins.jsonl"), to_jsonl(&twins)));
    }
    let mut written = Vec::new();
    for (path, text) in files {
        std::fs::write(&path, text).map_err(|e| io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
