//! Starts the HTTP API over a store directory.
//!
//! ```text
//! cargo run --example serve -- ./ihcq-store 8080
//! curl localhost:8080/api/slides
//! ```

use std::net::SocketAddr;

use ihcq::baseline::BaselineParams;
use ihcq::store::Store;

#[tokio::main]
async fn main() -> std::io::Result<()> {
    let mut args = std::env::args().skip(1);
    let root = args.next().unwrap_or_else(|| "ihcq-store".into());
    let port: u16 = args.next().and_then(|p| p.parse().ok()).unwrap_or(8080);
    let store = Store::open(&root).map_err(std::io::Error::other)?;
    let addr = SocketAddr::from(([127, 0, 0, 1], port));
    println!("serving {root} on http://{addr}");
    ihcq::service::serve(store, BaselineParams::default(), addr).await
}
