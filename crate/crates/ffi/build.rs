use std::path::PathBuf;

fn main() {
    let crate_dir = PathBuf::from(std::env::var("CARGO_MANIFEST_DIR").expect("set by cargo"));
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
    let config = cbindgen::Config::from_file(crate_dir.join("cbindgen.toml")).expect("readable cbindgen.toml");
    let bindings = cbindgen::Builder::new()
        .with_crate(&crate_dir)
        .with_config(config)
        .generate()
        .expect("Unable to generate bindings");
    let out = PathBuf::from(std::env::var("OUT_DIR").expect("set by cargo")).join("spin1_forge.h");
    bindings.write_to_file(&out);
    // keep a copy next to the sources for C consumers; only touched on change
    bindings.write_to_file(crate_dir.join("include").join("spin1_forge.h"));
}
