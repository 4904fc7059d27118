use super::EmbeddingTable;

/// Adam moments for both embedding matrices with one shared step counter.
///
/// Only rows touched by a batch are updated ("lazy" sparse Adam); the bias
/// correction uses the global step.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub user_m: Vec<f64>,
    pub user_v: Vec<f64>,
    pub item_m: Vec<f64>,
    pub item_v: Vec<f64>,
}

impl AdamState {
    pub fn new(table: &EmbeddingTable) -> Self {
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            user_m: vec![0.0; table.user_matrix().len()],
            user_v: vec![0.0; table.user_matrix().len()],
            item_m: vec![0.0; table.item_matrix().len()],
            item_v: vec![0.0; table.item_matrix().len()],
        }
    }

    pub fn matches(&self, table: &EmbeddingTable) -> bool {
        self.user_m.len() == table.user_matrix().len()
            && self.user_v.len() == self.user_m.len()
            && self.item_m.len() == table.item_matrix().len()
            && self.item_v.len() == self.item_m.len()
    }

    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    fn update(&self, params: &mut [f64], m: &mut [f64], v: &mut [f64], grad: &[f64], lr: f64) {
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for k in 0..params.len() {
            m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * grad[k];
            v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * grad[k] * grad[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            params[k] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }

    pub fn update_user(&mut self, table: &mut EmbeddingTable, user: usize, grad: &[f64], lr: f64) {
        let d = table.dim();
        let range = user * d..(user + 1) * d;
        let mut m = std::mem::take(&mut self.user_m);
        let mut v = std::mem::take(&mut self.user_v);
        self.update(
            table.user_mut(user),
            &mut m[range.clone()],
            &mut v[range],
            grad,
            lr,
        );
        self.user_m = m;
        self.user_v = v;
    }

    pub fn update_item(&mut self, table: &mut EmbeddingTable, item: usize, grad: &[f64], lr: f64) {
        let d = table.dim();
        let range = item * d..(item + 1) * d;
        let mut m = std::mem::take(&mut self.item_m);
        let mut v = std::mem::take(&mut self.item_v);
        self.update(
            table.item_mut(item),
            &mut m[range.clone()],
            &mut v[range],
            grad,
            lr,
        );
        self.item_m = m;
        self.item_v = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_step_is_normalized_gradient() {
        let mut table = EmbeddingTable::from_parts(1, 1, 3, vec![0.5, -0.2, 0.1], vec![0.0; 3]).unwrap();
        let mut adam = AdamState::new(&table);
        let grad = [0.3, -2.0, 1e-9];
        let lr = 0.01;
        adam.begin_step();
        adam.update_user(&mut table, 0, &grad, lr);
        // bias-corrected moments equal g and g^2 on the first step
        let expected: Vec<f64> = [0.5, -0.2, 0.1]
            .iter()
            .zip(grad)
            .map(|(p, g)| p - lr * g / (g.abs() + 1e-8))
            .collect();
        for (a, b) in table.user(0).iter().zip(&expected) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut table = EmbeddingTable::init(2, 2, 4, 0).unwrap();
        let before = table.clone();
        let mut adam = AdamState::new(&table);
        for _ in 0..5 {
            adam.begin_step();
            adam.update_item(&mut table, 1, &[1.0, -1.0, 0.5, 2.0], 0.0);
        }
        assert_eq!(table, before);
    }
}
