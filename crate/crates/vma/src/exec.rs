use vma_core::agents::AgentSession;
use vma_core::topology::{AgentOutcome, Executor};

/// Runs each agent session on its own scoped thread. Outcomes come back in
/// input order, so traces match a sequential run.
#[derive(Debug, Default, Clone, Copy)]
pub struct Threaded;

impl Executor for Threaded {
    fn run_all(&self, sessions: Vec<AgentSession>) -> Vec<AgentOutcome> {
        std::thread::scope(|scope| {
            let handles: Vec<_> = sessions
                .into_iter()
                .map(|mut session| {
                    scope.spawn(move || {
                        let result = session.ask(None);
                        (session, result)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("agent thread panicked"))
                .collect()
        })
    }
}
