use std::sync::Arc;
use std::time::Duration;

use tokio::net::UdpSocket;
use voxpilot_drone::udp::serve_udp;
use voxpilot_drone::{Error, Simulator};

async fn send(socket: &UdpSocket, text: &str) -> String {
    socket.send(text.as_bytes()).await.unwrap();
    let mut buf = [0u8; 64];
    let n = tokio::time::timeout(Duration::from_secs(5), socket.recv(&mut buf))
        .await
        .expect("reply in time")
        .unwrap();
    String::from_utf8_lossy(&buf[..n]).into_owned()
}

async fn client(addr: std::net::SocketAddr) -> UdpSocket {
    let socket = UdpSocket::bind("127.0.0.1:0").await.unwrap();
    socket.connect(addr).await.unwrap();
    socket
}

#[tokio::test]
async fn golden_exchange() {
    let sim = Arc::new(Simulator::default());
    let server = serve_udp(sim.clone(), "127.0.0.1:0").await.unwrap();
    let socket = client(server.local_addr).await;
    assert_eq!(send(&socket, "command").await, "ok");
    assert_eq!(send(&socket, "garbage").await, "error");
    assert_eq!(send(&socket, "forward 20").await, "error");
    assert_eq!(send(&socket, "takeoff").await, "ok");
    assert_eq!(send(&socket, "up 20").await, "ok");
    assert_eq!(send(&socket, "up 20").await, "ok");
    assert_eq!(sim.state().z, 120);
    assert_eq!(send(&socket, "land").await, "ok");
    assert_eq!(sim.state().z, 0);
    assert!(!sim.state().flying);
}

#[tokio::test]
async fn rapid_datagrams_are_serialized() {
    let sim = Arc::new(Simulator::default());
    let server = serve_udp(sim.clone(), "127.0.0.1:0").await.unwrap();
    let socket = client(server.local_addr).await;
    assert_eq!(send(&socket, "takeoff").await, "ok");
    socket.send(b"up 20").await.unwrap();
    socket.send(b"up 20").await.unwrap();
    let mut buf = [0u8; 16];
    for _ in 0..2 {
        let n = tokio::time::timeout(Duration::from_secs(5), socket.recv(&mut buf))
            .await
            .unwrap()
            .unwrap();
        assert_eq!(&buf[..n], b"ok");
    }
    assert_eq!(sim.state().z, 120);
    assert_eq!(sim.log(), ["takeoff", "up 20", "up 20"]);
}

#[tokio::test]
async fn bind_failure_is_reported() {
    let sim = Arc::new(Simulator::default());
    let first = serve_udp(sim.clone(), "127.0.0.1:0").await.unwrap();
    let taken = first.local_addr.to_string();
    let err = serve_udp(sim, &taken).await.unwrap_err();
    assert!(matches!(err, Error::Bind { .. }), "{err}");
    let err = serve_udp(Arc::new(Simulator::default()), "not an address").await.unwrap_err();
    assert!(matches!(err, Error::Bind { .. }), "{err}");
}
