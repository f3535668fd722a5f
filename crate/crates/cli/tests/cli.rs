use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
[run]
jobs = 1
seeds = [1]

[data]
kind = "synthetic"
vocab_size = 20
train = 40
dev = 8
test = 12

[nmt]
targets = ["context-reverse", "copy"]
depths = [2]
untrained_control = true
embed_dim = 6
hidden_dim = 6
epochs = 1

[probe]
tasks = ["pos", "sem"]
epochs = 2

[baselines]
word2tag = false

[baselines.skipgram]
epochs = 1

[significance]
shuffles = 50
"#;

fn layerprobe(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_layerprobe"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .arg("-q")
        .output()
        .unwrap()
}

fn setup(toml: &str) -> (tempfile::TempDir, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.toml");
    fs::write(&config, toml).unwrap();
    let out = dir.path().join("out");
    (dir, config, out)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_every_report() {
    let (_dir, config, out) = setup(TINY);
    let o = layerprobe(&["run"], &config, &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let reports = out.join("reports");
    for f in [
        "results.csv",
        "bleu.csv",
        "layers_pos.csv",
        "layers_sem.csv",
        "untrained_sem.csv",
        "variants.csv",
        "depths.csv",
        "baselines.csv",
        "coarse_f1_delta.csv",
        "significance.csv",
        "disagreements_context-reverse.tsv",
    ] {
        assert!(reports.join(f).is_file(), "missing {f}");
        assert!(stdout(&o).contains(f), "{f} not listed on stdout");
    }
    let results = fs::read_to_string(reports.join("results.csv")).unwrap();
    assert!(results.starts_with("cell,kind,task,target,depth,variant,size,seed,trained,layer,accuracy,tokens\n"));
    for line in results.lines().skip(1) {
        let acc: f64 = line.split(',').nth(10).unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&acc), "{line}");
    }
}

#[test]
fn second_run_retrains_nothing() {
    let (_dir, config, out) = setup(TINY);
    let first = layerprobe(&["train-nmt"], &config, &out);
    assert!(first.status.success(), "{}", stderr(&first));
    assert_eq!(stdout(&first).trim(), "Nmt: 3 ran, 0 cached");
    let ckpts: Vec<PathBuf> = walk(&out.join("cache"))
        .into_iter()
        .filter(|p| p.ends_with("model.ckpt"))
        .collect();
    assert_eq!(ckpts.len(), 3);
    let stamp = |p: &PathBuf| fs::metadata(p).unwrap().modified().unwrap();
    let before: Vec<_> = ckpts.iter().map(stamp).collect();

    let again = layerprobe(&["train-nmt"], &config, &out);
    assert_eq!(stdout(&again).trim(), "Nmt: 0 ran, 3 cached");
    assert_eq!(before, ckpts.iter().map(stamp).collect::<Vec<_>>());

    // A new target adds one cell and reuses the rest.
    fs::write(&config, TINY.replace("\"copy\"]", "\"reverse\", \"copy\"]")).unwrap();
    let grown = layerprobe(&["train-nmt"], &config, &out);
    assert_eq!(stdout(&grown).trim(), "Nmt: 1 ran, 3 cached");
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn probe_layer_beyond_depth_is_a_config_error() {
    let (_dir, config, out) = setup(&TINY.replace("epochs = 2\n", "epochs = 2\nlayers = [0, 5]\n"));
    let o = layerprobe(&["run"], &config, &out);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.starts_with("error: {"), "{err}");
    let json: serde_json::Value =
        serde_json::from_str(err.trim_start_matches("error: ").trim()).unwrap();
    assert_eq!(json["kind"], "config");
    assert_eq!(json["field"], "probe.layers");
    assert!(!out.exists(), "nothing should be written");
}

#[test]
fn report_before_training_lists_missing_cells() {
    let (_dir, config, out) = setup(TINY);
    let o = layerprobe(&["report"], &config, &out);
    assert_eq!(o.status.code(), Some(1));
    let json: serde_json::Value =
        serde_json::from_str(stderr(&o).trim_start_matches("error: ").trim()).unwrap();
    assert_eq!(json["kind"], "missing-cells");
    assert!(json["message"]
        .as_str()
        .unwrap()
        .contains("probe.nmt.context-reverse.L2.uni.full.s1.pos.k0"));
}

#[test]
fn bad_usage_exits_2() {
    let o = Command::new(env!("CARGO_BIN_EXE_layerprobe"))
        .args(["run", "--jobs", "many"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("\"kind\":\"usage\""));
    let help = Command::new(env!("CARGO_BIN_EXE_layerprobe")).arg("--help").output().unwrap();
    assert!(help.status.success());
    assert!(stdout(&help).contains("train-nmt"));
}

/// File-based data with the full SEM schema: the coarse delta table has one
/// direct and one fine-micro row for each of the 13 categories.
#[test]
fn files_run_with_sem_schema_has_26_coarse_rows() {
    let dir = tempfile::tempdir().unwrap();
    let schema = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/semtag_schema.tsv");
    let w = |name: &str, text: &str| fs::write(dir.path().join(name), text).unwrap();
    let sents = [
        ("the cat sat", "el gato se sento", ["DEF", "CON", "PST"]),
        ("he saw her", "el la vio", ["PRO", "PST", "PRO"]),
        ("a dog ran", "un perro corrio", ["DIS", "CON", "PST"]),
        ("this is good", "esto es bueno", ["PRX", "ENS", "IST"]),
    ];
    for split in ["train", "dev", "test"] {
        let en: String = sents.iter().map(|s| format!("{}\n", s.0)).collect();
        let es: String = sents.iter().map(|s| format!("{}\n", s.1)).collect();
        let sem: String = sents
            .iter()
            .map(|s| {
                s.0.split(' ')
                    .zip(s.2)
                    .map(|(w, t)| format!("{w}\t{t}\n"))
                    .collect::<String>()
                    + "\n"
            })
            .collect();
        w(&format!("en.{split}"), &en);
        w(&format!("es.{split}"), &es);
        w(&format!("sem.{split}"), &sem);
    }
    let toml = format!(
        r#"
[data]
kind = "files"
autoencoder = true
source = {{ train = "en.train", dev = "en.dev", test = "en.test" }}
targets.es = {{ train = "es.train", dev = "es.dev", test = "es.test" }}
sem = {{ train = "sem.train", dev = "sem.dev", test = "sem.test", schema = "{}" }}

[nmt]
targets = ["es"]
depths = [2]
embed_dim = 4
hidden_dim = 4
epochs = 1

[probe]
tasks = ["sem", "sem-coarse"]
epochs = 1

[baselines]
unsup_emb = false
word2tag = false

[significance]
shuffles = 20
"#,
        schema.display()
    );
    w("exp.toml", &toml);
    let out = dir.path().join("out");
    let o = layerprobe(&["run"], &dir.path().join("exp.toml"), &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let delta = fs::read_to_string(out.join("reports/coarse_f1_delta.csv")).unwrap();
    let rows: Vec<&str> = delta.lines().skip(1).collect();
    assert_eq!(rows.len(), 26);
    let coarse: std::collections::BTreeSet<&str> =
        rows.iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(coarse.len(), 13);
    let layers = fs::read_to_string(out.join("reports/layers_sem.csv")).unwrap();
    assert_eq!(layers.lines().next().unwrap(), "layer,es,autoencoder,cells");
}
