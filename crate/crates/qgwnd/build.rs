fn main() {
    // System OpenBLAS provides the LAPACK routines declared in src/linalg.rs.
    println!("cargo:rustc-link-lib=dylib=openblas");
}
