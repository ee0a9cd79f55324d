"""
Cert Relay - Configuration Settings
证书中继 - 全局配置文件

概率可靠广播 (PRB/WCPRB) + ICE-FROST 门限签名模拟器的配置参数。
环境变量前缀 CERT_RELAY_，可写在项目根目录的 .env 中。
"""

import os
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

# 项目根目录
BASE_DIR = Path(__file__).resolve().parent.parent

# 存储路径
STORAGE_DIR = BASE_DIR / "storage"
LOG_DIR = STORAGE_DIR / "logs"
TRACE_DIR = STORAGE_DIR / "traces"
RUN_DIR = STORAGE_DIR / "runs"
REPORT_DIR = STORAGE_DIR / "reports"
SCENARIO_DIR = BASE_DIR / "scenarios"

# 确保目录存在
for dir_path in [LOG_DIR, TRACE_DIR, RUN_DIR, REPORT_DIR]:
    dir_path.mkdir(parents=True, exist_ok=True)

# 配置文档版本（场景 / SimConfig JSON）
SCHEMA_VERSION = 1

# ==================== 群后端配置 ====================
CONFIG_GROUP = {
    "backend": os.getenv("CERT_RELAY_BACKEND", "secp256k1"),  # secp256k1 | inspection
}

# ==================== 采样配置 (PRB) ====================
CONFIG_SAMPLES = {
    "K": 4.0,                               # 样本大小 = ceil(K * ln n)
    "echo_fraction": 2 / 3,                 # E = ceil(2 * |Echo| / 3)
    "ready_fraction": 1 / 3,                # R = ceil(|Ready| / 3)
    "delivery_fraction": 2 / 3,             # D = ceil(2 * |Delivery| / 3)，交付需要 > D
}

# ==================== Gossip 配置 (pb) ====================
CONFIG_GOSSIP = {
    "fanout": None,                         # None = ceil(ln n) + 1
    "rounds": 3,                            # 每个节点推送的轮数
    "interval": 1.0,                        # 轮间隔（事件时间）
}

# ==================== 延迟模型 ====================
CONFIG_LATENCY = {
    "family": "lognormal",                  # lognormal | uniform | constant
    "median": 1.0,                          # 对数正态中位数（事件时间）
    "sigma": 0.5,                           # 对数正态 σ
    "low": 0.5,                             # uniform 下界
    "high": 1.5,                            # uniform 上界
}

# ==================== 分布式密钥生成 ====================
CONFIG_DKG = {
    "abort_floor_fraction": 2 / 3,          # 中止下限 = max(t, ceil(fraction * n))
}

# ==================== 门限签名 ====================
CONFIG_SIGNING = {
    "signer_count": None,                   # None = 全部未排除持有者参与
    "max_attempts": 8,                      # 排除后重试的最大轮数
}

# ==================== WCPRB ====================
CONFIG_WCPRB = {
    "validate_at_prb": False,               # Valid' 优化：在 gossip 阶段就检查 valid_cert
    "pending_gc_horizon": 200.0,            # 孤立 pending 条目的回收时限（事件时间）
}

# ==================== 模拟器 ====================
CONFIG_SIM = {
    "seed": int(os.getenv("CERT_RELAY_SEED", "1")),
    "horizon": 1000.0,                      # 事件时间上限
    "trace_messages": False,                # 逐条记录网络消息（大规模扫描时关闭）
    "audit_validity": True,                 # 记录每次 valid(m) 求值，用于单调性审计
}

# ==================== 实验框架 ====================
CONFIG_HARNESS = {
    "workers": int(os.getenv("CERT_RELAY_WORKERS", "4")),   # 重复实验的工作线程数
    "sweep_n_values": [128, 512, 2048],     # 消息复杂度扫描的 n
    "sweep_reps": 20,                       # 每个 n 的种子数
    "sweep_tolerance": 0.30,                # 与 ln 比值预测的相对误差容忍度
}

# ==================== 日志 ====================
CONFIG_LOGGING = {
    "level": os.getenv("CERT_RELAY_LOG_LEVEL", "INFO"),
    "format": "%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    "log_path": str(LOG_DIR / "cert_relay.log"),
}


# ==================== 配置导出 ====================
def get_sample_config() -> dict:
    """获取采样配置副本"""
    return dict(CONFIG_SAMPLES)


def get_gossip_config() -> dict:
    """获取 gossip 配置副本"""
    return dict(CONFIG_GOSSIP)


def get_latency_config() -> dict:
    """获取延迟模型配置副本"""
    return dict(CONFIG_LATENCY)


def get_sim_config() -> dict:
    """获取模拟器默认配置（合并各区块，用于初始化 SimConfig）"""
    return {
        'seed': CONFIG_SIM['seed'],
        'horizon': CONFIG_SIM['horizon'],
        'trace_messages': CONFIG_SIM['trace_messages'],
        'audit_validity': CONFIG_SIM['audit_validity'],
        'backend': CONFIG_GROUP['backend'],
        'samples': get_sample_config(),
        'gossip': get_gossip_config(),
        'latency': get_latency_config(),
        'abort_floor_fraction': CONFIG_DKG['abort_floor_fraction'],
        'signer_count': CONFIG_SIGNING['signer_count'],
        'validate_at_prb': CONFIG_WCPRB['validate_at_prb'],
        'pending_gc_horizon': CONFIG_WCPRB['pending_gc_horizon'],
    }


# ==================== 配置验证函数 ====================
def validate_settings():
    """验证配置参数的合理性，返回问题列表"""
    issues = []

    if CONFIG_GROUP['backend'] not in ("secp256k1", "inspection"):
        issues.append(f"未知群后端: {CONFIG_GROUP['backend']}")

    if CONFIG_SAMPLES['K'] <= 0:
        issues.append(f"K 必须为正数: {CONFIG_SAMPLES['K']}")
    for key in ("echo_fraction", "ready_fraction", "delivery_fraction"):
        if not (0 < CONFIG_SAMPLES[key] < 1):
            issues.append(f"{key} 必须在 (0, 1) 内: {CONFIG_SAMPLES[key]}")

    if CONFIG_GOSSIP['fanout'] is not None and CONFIG_GOSSIP['fanout'] < 1:
        issues.append(f"fanout 必须 >= 1: {CONFIG_GOSSIP['fanout']}")
    if CONFIG_GOSSIP['rounds'] < 1:
        issues.append(f"rounds 必须 >= 1: {CONFIG_GOSSIP['rounds']}")

    if CONFIG_LATENCY['family'] not in ("lognormal", "uniform", "constant"):
        issues.append(f"未知延迟分布: {CONFIG_LATENCY['family']}")
    if CONFIG_LATENCY['median'] <= 0:
        issues.append("延迟中位数必须为正")

    if not (0 < CONFIG_DKG['abort_floor_fraction'] <= 1):
        issues.append("abort_floor_fraction 必须在 (0, 1] 内")

    if CONFIG_SIGNING['max_attempts'] < 1:
        issues.append("max_attempts 必须 >= 1")

    if CONFIG_WCPRB['pending_gc_horizon'] <= 0:
        issues.append("pending_gc_horizon 必须为正")

    if CONFIG_SIM['horizon'] <= 0:
        issues.append("horizon 必须为正")

    if CONFIG_HARNESS['workers'] < 1:
        issues.append("workers 必须 >= 1")
    if len(CONFIG_HARNESS['sweep_n_values']) < 3:
        issues.append("消息复杂度扫描至少需要 3 个 n 值")

    return issues


# ==================== 配置自检 ====================
if __name__ == "__main__":
    print("=" * 60)
    print("Cert Relay - 配置验证")
    print("=" * 60)

    issues = validate_settings()

    if issues:
        print("\n❌ 配置验证失败：")
        for issue in issues:
            print(f"  - {issue}")
    else:
        print("\n✅ 配置验证通过")

        print("\n核心参数：")
        print(f"  群后端: {CONFIG_GROUP['backend']}")
        print(f"  采样倍数 K: {CONFIG_SAMPLES['K']}")
        print(f"  Gossip: fanout={CONFIG_GOSSIP['fanout'] or 'ceil(ln n)+1'}, rounds={CONFIG_GOSSIP['rounds']}")
        print(f"  延迟: {CONFIG_LATENCY['family']} median={CONFIG_LATENCY['median']} σ={CONFIG_LATENCY['sigma']}")
        print(f"  Valid' 优化: {CONFIG_WCPRB['validate_at_prb']}")
