//! Machine scheduling with sequence-dependent setups: generate an instance,
//! run the greedy + local-search baseline, and print the resulting lanes.
//!
//! ```sh
//! cargo run --example ipms_schedule
//! ```

use auctionq::baselines::{ipms_local_search, schedule_makespan};
use auctionq::ipms::{epoch_step, generate_instance, IPMSState};
use auctionq::mrrc::Matching;

fn main() {
    let inst = generate_instance(5, 3, 12).unwrap();
    println!(
        "instance: {} machines, {} tasks, processing times {:?}",
        inst.n_machines,
        inst.n_tasks(),
        inst.proc.iter().map(|p| p.round()).collect::<Vec<_>>()
    );
    println!("make-span lower bound: {:.1}\n", inst.lower_bound());

    let (schedule, makespan) = ipms_local_search(&inst, 10, 3);
    for (m, lane) in schedule.iter().enumerate() {
        println!("machine {m}: {lane:?}");
    }
    println!("local-search make-span: {makespan:.1}");
    assert!((schedule_makespan(&inst, &schedule) - makespan).abs() < 1e-9);

    // Replay the first lane decisions through the epoch dynamics.
    let mut state = IPMSState::fresh(&inst);
    let mut cursor = vec![0usize; inst.n_machines];
    let mut total = 0.0;
    while !state.is_terminal() {
        let mut pairs = Vec::new();
        for m in state.assignable_machines() {
            let lane = &schedule[m as usize];
            while cursor[m as usize] < lane.len()
                && !state.unserved.contains(&lane[cursor[m as usize]])
            {
                cursor[m as usize] += 1;
            }
            if let Some(&t) = lane.get(cursor[m as usize]) {
                if state.assignable_tasks().contains(&t) {
                    pairs.push((m, t));
                }
            }
        }
        let (next, elapsed) = epoch_step(&inst, &state, &Matching::new(pairs).unwrap()).unwrap();
        total += elapsed;
        state = next;
    }
    println!("replayed through the epoch dynamics: make-span {total:.1}");
    assert!((total - makespan).abs() < 1e-6);
}
