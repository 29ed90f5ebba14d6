//! The simulator behind a UDP socket: one datagram in, one reply out.

use std::net::SocketAddr;
use std::sync::Arc;

use tokio::net::UdpSocket;
use tokio::task::JoinHandle;

use crate::error::{Error, Result};
use crate::sim::Simulator;

pub const DEFAULT_UDP_ADDR: &str = "127.0.0.1:8889";

#[derive(Debug)]
pub struct UdpServer {
    pub local_addr: SocketAddr,
    task: JoinHandle<()>,
}

impl UdpServer {
    pub fn abort(&self) {
        self.task.abort();
    }
}

impl Drop for UdpServer {
    fn drop(&mut self) {
        self.task.abort();
    }
}

/// Binds `addr` and answers each datagram with `ok` or `error`. Datagrams
/// are handled one at a time, in arrival order.
pub async fn serve_udp(sim: Arc<Simulator>, addr: &str) -> Result<UdpServer> {
    let socket = UdpSocket::bind(addr).await.map_err(|source| Error::Bind {
        addr: addr.to_string(),
        source,
    })?;
    let local_addr = socket.local_addr()?;
    let task = tokio::spawn(async move {
        let mut buf = vec![0u8; 2048];
        loop {
            let (n, peer) = match socket.recv_from(&mut buf).await {
                Ok(v) => v,
                Err(e) => {
                    log::warn!("udp receive failed: {e}");
                    continue;
                }
            };
            let reply = match std::str::from_utf8(&buf[..n]) {
                Ok(text) => sim.apply(text.trim()).0,
                Err(_) => crate::sim::Reply::Error,
            };
            if let Err(e) = socket.send_to(reply.as_str().as_bytes(), peer).await {
                log::warn!("udp reply to {peer} failed: {e}");
            }
        }
    });
    Ok(UdpServer { local_addr, task })
}
