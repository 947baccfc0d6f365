// Licensed under the Apache License, Version 2.0 (the "License"); you may
// not use this file except in compliance with the License. You may obtain
// a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS, WITHOUT
// WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied. See the
// License for the specific language governing permissions and limitations
// under the License.

mod common;

use std::path::Path;

use ovcomm::farm::{BackendError, EvalContext, Farm, FitnessBackend, SequentialBackend, Transport};
use ovcomm::ga::{init_population, master_rng, run, GaConfig, Genotype};

use common::{worker_exe, zachary};

fn genotypes(count: usize) -> Vec<Genotype> {
    let cfg = GaConfig::default();
    init_population(&cfg, 34, &mut master_rng(1))
        .into_iter()
        .take(count)
        .map(|i| i.genotype)
        .collect()
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn process_workers_match_sequential_bits() {
    let ctx = EvalContext::new(zachary(), Default::default());
    let batch = genotypes(23);
    let expected = SequentialBackend::new(ctx.clone()).evaluate_batch(&batch).unwrap();
    for transport in [Transport::Pipe, Transport::Tcp] {
        for w in [1, 3] {
            let mut farm = Farm::launch(transport, w, &ctx, Some(&worker_exe())).unwrap();
            assert_eq!(farm.worker_count(), w);
            let got = farm.evaluate_batch(&batch).unwrap();
            assert_eq!(bits(&got), bits(&expected), "{transport} x{w}");
            assert!(farm.last_trace().iter().all(|&k| k < w));
        }
    }
}

#[test]
fn full_runs_are_identical_across_backends() {
    let g = zachary();
    let cfg = GaConfig {
        max_epochs: 150,
        ..GaConfig::with_seed(11)
    };
    let ctx = EvalContext::new(g.clone(), cfg.logistic);
    let reference = run(&g, &cfg, &mut SequentialBackend::new(ctx.clone())).unwrap();
    for (transport, w) in [(Transport::InProcess, 2), (Transport::Pipe, 2), (Transport::Tcp, 4)] {
        let mut farm = Farm::launch(transport, w, &ctx, Some(&worker_exe())).unwrap();
        let got = run(&g, &cfg, &mut farm).unwrap();
        assert_eq!(got, reference, "{transport} x{w}");
    }
}

#[test]
fn missing_worker_executable_is_a_startup_error() {
    let ctx = EvalContext::new(zachary(), Default::default());
    let missing = Path::new("/nonexistent/ovcomm-worker");
    for transport in [Transport::Pipe, Transport::Tcp] {
        assert!(matches!(
            Farm::launch(transport, 2, &ctx, Some(missing)),
            Err(BackendError::Startup(_))
        ));
    }
}

#[test]
fn worker_that_is_not_a_worker_fails_handshake() {
    // `true` exits immediately without answering HELLO
    let ctx = EvalContext::new(zachary(), Default::default());
    let r = Farm::spawn_pipe(Path::new("/bin/true"), 1, &ctx);
    assert!(matches!(r, Err(BackendError::Startup(_))), "{:?}", r.err());
}
