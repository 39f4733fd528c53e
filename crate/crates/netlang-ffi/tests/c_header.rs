//! The generated header must be valid C and, when the static library
//! artifact is present, a small C consumer must link and run against
//! the ABI.

use std::path::PathBuf;
use std::process::Command;

fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn target_debug_dir() -> Option<PathBuf> {
    // Tests run from target/<profile>/deps; the library artifacts live
    // one level up.
    let exe = std::env::current_exe().ok()?;
    Some(exe.parent()?.parent()?.to_path_buf())
}

#[test]
fn header_covers_the_exported_surface() {
    let header = std::fs::read_to_string(manifest_dir().join("include/netlang.h"))
        .expect("header exists; built by build.rs");
    for symbol in [
        "nl_version",
        "nl_last_error",
        "nl_string_free",
        "nl_grammar_from_json",
        "nl_grammar_free",
        "nl_grammar_validate",
        "nl_grammar_node_count",
        "nl_grammar_sample",
        "nl_grammar_to_dot",
        "nl_grammar_to_json",
        "nl_stc_from_json",
        "nl_stc_free",
        "nl_stc_to_json",
        "nl_stc_parse_trace",
        "nl_stc_describe",
        "nl_stc_describe_pg",
        "nl_simulate",
        "nl_induce",
        "NL_STATUS_OK",
    ] {
        assert!(header.contains(symbol), "header is missing {symbol}");
    }
}

#[test]
fn c_consumer_compiles_and_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let source = tmp.path().join("consumer.c");
    std::fs::write(
        &source,
        r#"
#include <stdio.h>
#include <string.h>
#include "netlang.h"

int main(void) {
    const char *json =
        "{\"layer\":\"Temporal\",\"start\":\"Task\","
        "\"terminals\":[\"A1\",\"A2\",\"A3\",\"A4\"],"
        "\"nodes\":["
        "{\"id\":\"Task\",\"kind\":\"And\",\"children\":[{\"id\":\"Enc\",\"p\":1.0},{\"id\":\"Route\",\"p\":1.0},{\"id\":\"Dec\",\"p\":1.0}]},"
        "{\"id\":\"Enc\",\"kind\":\"And\",\"children\":[{\"id\":\"A3\",\"p\":1.0},{\"id\":\"A2\",\"p\":1.0}]},"
        "{\"id\":\"Route\",\"kind\":\"And\",\"children\":[{\"id\":\"A3\",\"p\":1.0},{\"id\":\"A4\",\"p\":1.0}]},"
        "{\"id\":\"Dec\",\"kind\":\"And\",\"children\":[{\"id\":\"A3\",\"p\":1.0},{\"id\":\"A1\",\"p\":1.0}]}"
        "]}";
    NlGrammar *g = NULL;
    if (nl_grammar_from_json(json, &g) != NL_STATUS_OK) return 1;
    if (nl_grammar_node_count(g) != 8) return 2;
    char *frontier = nl_grammar_sample(g, 7);
    if (frontier == NULL) return 3;
    int ok = strcmp(frontier, "A3 A2 A3 A4 A3 A1") == 0;
    nl_string_free(frontier);
    nl_grammar_free(g);
    if (!ok) return 4;
    printf("ok\n");
    return 0;
}
"#,
    )
    .unwrap();

    let lib_dir = target_debug_dir().expect("target dir");
    let static_lib = lib_dir.join("libnetlang_ffi.a");
    assert!(
        static_lib.exists(),
        "static library missing at {}; build the netlang-ffi crate first",
        static_lib.display()
    );

    let exe = tmp.path().join("consumer");
    let compile = Command::new("cc")
        .arg(&source)
        .arg("-I")
        .arg(manifest_dir().join("include"))
        .arg(&static_lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .arg("-o")
        .arg(&exe)
        .output()
        .expect("cc is available");
    assert!(
        compile.status.success(),
        "compilation failed: {}",
        String::from_utf8_lossy(&compile.stderr)
    );

    let run = Command::new(&exe).output().expect("consumer runs");
    assert!(run.status.success(), "consumer exit {:?}", run.status.code());
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "ok");
}
