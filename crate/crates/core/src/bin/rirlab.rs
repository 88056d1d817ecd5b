fn main() {
    if let Some(n) = std::env::var("RIRLAB_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let code = rirlab::cli::main(std::env::args_os(), &mut std::io::stdout().lock());
    std::process::exit(code);
}
