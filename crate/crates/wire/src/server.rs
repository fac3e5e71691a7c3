use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use tracing::{debug, warn};

use crate::channel::{Channel, Transport};

/// Handles one request line from an (optionally authenticated) peer and
/// returns the reply line.
pub type Handler = Arc<dyn Fn(Option<&str>, &[u8]) -> Vec<u8> + Send + Sync>;

struct Job {
    peer: Option<String>,
    line: Vec<u8>,
    reply: Sender<Vec<u8>>,
}

pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept_thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Unblock accept().
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }

    /// Blocks until the server stops.
    pub fn wait(mut self) {
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.accept_thread.is_some() {
            self.stop_now();
        }
    }
}

/// Starts serving on `listener`. Each connection gets an I/O thread; request
/// handling runs on a pool of `workers` threads.
pub fn spawn(
    listener: TcpListener,
    transport: Transport,
    handler: Handler,
    workers: usize,
) -> io::Result<ServerHandle> {
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let (job_tx, job_rx) = mpsc::channel::<Job>();
    let job_rx = Arc::new(Mutex::new(job_rx));
    for _ in 0..workers.max(1) {
        let rx = Arc::clone(&job_rx);
        let handler = Arc::clone(&handler);
        thread::spawn(move || worker_loop(rx, handler));
    }
    let transport = Arc::new(transport);
    let stop_flag = Arc::clone(&stop);
    let accept_thread = thread::spawn(move || {
        for conn in listener.incoming() {
            if stop_flag.load(Ordering::SeqCst) {
                break;
            }
            let stream = match conn {
                Ok(s) => s,
                Err(e) => {
                    warn!("accept failed: {e}");
                    continue;
                }
            };
            let transport = Arc::clone(&transport);
            let jobs = job_tx.clone();
            let stop = Arc::clone(&stop_flag);
            thread::spawn(move || {
                if let Err(e) = connection_loop(stream, &transport, jobs, &stop) {
                    debug!("connection ended: {e}");
                }
            });
        }
    });
    Ok(ServerHandle {
        addr,
        stop,
        accept_thread: Some(accept_thread),
    })
}

fn worker_loop(rx: Arc<Mutex<Receiver<Job>>>, handler: Handler) {
    loop {
        let job = match rx.lock() {
            Ok(guard) => match guard.recv() {
                Ok(job) => job,
                Err(_) => return,
            },
            Err(_) => return,
        };
        let reply = handler(job.peer.as_deref(), &job.line);
        let _ = job.reply.send(reply);
    }
}

fn connection_loop(stream: TcpStream, transport: &Transport, jobs: Sender<Job>, stop: &AtomicBool) -> io::Result<()> {
    let mut chan = Channel::accept(stream, transport)?;
    let peer = chan.peer_id().map(str::to_string);
    while let Some(line) = chan.recv_line()? {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let (tx, rx) = mpsc::channel();
        jobs.send(Job {
            peer: peer.clone(),
            line,
            reply: tx,
        })
        .map_err(|_| io::Error::other("server stopped"))?;
        let reply = rx.recv().map_err(|_| io::Error::other("worker dropped request"))?;
        chan.send_line(&reply)?;
    }
    Ok(())
}
