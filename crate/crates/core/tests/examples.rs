macro_rules! example {
    ($name:ident, $file:literal) => {
        #[allow(dead_code)]
        mod $name {
            include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/", $file));
        }
    };
}

example!(synth_corpus, "synth_corpus.rs");
example!(rvq_codec, "rvq_codec.rs");
example!(masking_schedule, "masking_schedule.rs");
example!(prompts, "prompts.rs");
example!(iterative_decoding, "iterative_decoding.rs");
example!(train_and_vamp, "train_and_vamp.rs");
example!(metrics, "metrics.rs");
example!(file_formats, "file_formats.rs");

#[test]
fn synth_corpus_runs() {
    synth_corpus::run_example().unwrap();
}

#[test]
fn rvq_codec_runs() {
    rvq_codec::run_example().unwrap();
}

#[test]
fn masking_schedule_runs() {
    masking_schedule::run_example().unwrap();
}

#[test]
fn prompts_runs() {
    prompts::run_example().unwrap();
}

#[test]
fn iterative_decoding_runs() {
    iterative_decoding::run_example().unwrap();
}

#[test]
fn train_and_vamp_runs() {
    train_and_vamp::run_example().unwrap();
}

#[test]
fn metrics_runs() {
    metrics::run_example().unwrap();
}

#[test]
fn file_formats_runs() {
    file_formats::run_example().unwrap();
}
