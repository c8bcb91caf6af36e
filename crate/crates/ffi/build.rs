use std::env;
use std::path::PathBuf;

fn main() {
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");

    let crate_dir = env::var("CARGO_MANIFEST_DIR").unwrap();
    let header = PathBuf::from(&crate_dir).join("include").join("csvl.h");
    let config = cbindgen::Config::from_file(PathBuf::from(&crate_dir).join("cbindgen.toml")).expect("cbindgen.toml");

    match cbindgen::Builder::new().with_crate(&crate_dir).with_config(config).generate() {
        Ok(bindings) => {
            bindings.write_to_file(&header);
        }
        // a syntax cbindgen cannot parse should not block the Rust build
        Err(cbindgen::Error::ParseSyntaxError { .. }) => {
            println!("cargo:warning=cbindgen could not parse the crate; header not regenerated");
        }
        Err(e) => panic!("cbindgen failed: {e:?}"),
    }
}
