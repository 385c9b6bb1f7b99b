use hiros_core::protocol::{Direction, RobotAction};
use hiros_core::robotsim::*;
use proptest::prelude::*;

fn action() -> impl Strategy<Value = RobotAction> {
    let dir = prop_oneof![
        Just(Direction::Forward),
        Just(Direction::Backward),
        Just(Direction::Left),
        Just(Direction::Right)
    ];
    prop_oneof![
        dir.clone().prop_map(|dir| RobotAction::BaseStep { dir }),
        dir.prop_map(|dir| RobotAction::ArmAdjust { dir }),
        Just(RobotAction::ExecuteGraspHandover),
        Just(RobotAction::ArmReset),
        Just(RobotAction::None),
    ]
}

/// Drives a robot with (action, ticks-before-next-action) pairs.
fn drive(script: &[(RobotAction, u8)]) -> (Snapshot, Vec<SimEvent>) {
    let mut r = Robot::new(SimConfig::default(), demo_world());
    let mut events = Vec::new();
    for &(a, wait) in script {
        if let Ok(ev) = r.apply(a) {
            events.extend(ev);
        }
        for _ in 0..wait {
            events.extend(r.step());
        }
    }
    (r.snapshot(), events)
}

proptest! {
    #[test]
    fn identical_scripts_give_identical_snapshots(script in proptest::collection::vec((action(), 0u8..30), 0..25)) {
        prop_assert_eq!(drive(&script), drive(&script));
    }

    #[test]
    fn object_is_conserved_every_tick(script in proptest::collection::vec((action(), 0u8..30), 0..25)) {
        let mut r = Robot::new(SimConfig::default(), demo_world());
        for (a, wait) in script {
            let _ = r.apply(a);
            for _ in 0..wait {
                r.step();
                let s = r.snapshot();
                prop_assert_eq!(s.world.object_held, s.arm.holding_object);
                if s.arm.holding_object {
                    prop_assert!(!s.arm.gripper_open);
                    prop_assert_eq!(s.world.object, r.end_effector());
                }
                prop_assert!(s.pose.theta > -std::f64::consts::PI && s.pose.theta <= std::f64::consts::PI);
            }
        }
    }

    #[test]
    fn busy_rejection_never_alters_the_motion(first in action(), second in action(), at in 1u8..19) {
        let mut a = Robot::new(SimConfig::default(), demo_world());
        let mut b = a.clone();
        a.apply(RobotAction::BaseStep { dir: Direction::Forward }).unwrap();
        b.apply(RobotAction::BaseStep { dir: Direction::Forward }).unwrap();
        for _ in 0..at {
            a.step();
            b.step();
        }
        prop_assert!(a.apply(first).is_err());
        prop_assert!(a.apply(second).is_err());
        a.run_until_idle(1000);
        b.run_until_idle(1000);
        let (sa, sb) = (a.snapshot(), b.snapshot());
        prop_assert_eq!((sa.pose, sa.arm, sa.world, sa.tick), (sb.pose, sb.arm, sb.world, sb.tick));
    }
}

#[test]
fn idle_step_changes_nothing_but_the_clock() {
    let mut r = Robot::new(SimConfig::default(), demo_world());
    let before = r.snapshot();
    assert!(r.step().is_empty());
    let after = r.snapshot();
    assert_eq!((before.pose, before.arm, before.world), (after.pose, after.arm, after.world));
    assert_eq!(after.tick, 1);
}

#[test]
fn base_steps_compose_in_the_robot_frame() {
    let (s, _) = drive(&[
        (RobotAction::BaseStep { dir: Direction::Forward }, 20),
        (RobotAction::BaseStep { dir: Direction::Right }, 20),
    ]);
    assert!((s.pose.x - 0.25).abs() < 1e-12 && (s.pose.y + 0.25).abs() < 1e-12);
    assert!(!s.busy);
}

#[test]
fn arm_adjust_takes_ten_ticks() {
    let mut r = Robot::new(SimConfig::default(), demo_world());
    r.apply(RobotAction::ArmAdjust { dir: Direction::Left }).unwrap();
    let mut ticks = 0;
    while r.is_busy() {
        r.step();
        ticks += 1;
    }
    assert_eq!(ticks, 10);
    let s = r.snapshot();
    assert_eq!(s.arm.ee_offset, [0.0, 0.05]);
    assert_eq!(s.arm.posture, Posture::Extended);
}
