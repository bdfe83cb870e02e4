#!/usr/bin/env python3
"""
EventAttn 启动脚本

功能：
- 检查 Python 版本
- 自动检查并安装缺失的依赖
- 把 src/ 加入路径后转交给 cli.main（子命令与参数原样传入）

诊断信息全部写到 stderr，stdout 留给子命令输出的产物路径。
"""

import sys
import subprocess
import importlib.util
from pathlib import Path

# 最低 Python 版本要求（使用了 X | Y 类型注解）
MIN_PYTHON_VERSION = (3, 10)

# 必需依赖 (import 名, pip 名)
REQUIRED_PACKAGES = [
    ("numpy", "numpy"),
    ("scipy", "scipy"),
    ("yaml", "pyyaml"),
    ("tqdm", "tqdm"),
]


def _say(message: str) -> None:
    print(message, file=sys.stderr)


def check_python_version():
    """检查 Python 版本"""
    current = sys.version_info[:2]
    if current < MIN_PYTHON_VERSION:
        _say(f"❌ Python 版本过低: {current[0]}.{current[1]}")
        _say(f"   需要 Python {MIN_PYTHON_VERSION[0]}.{MIN_PYTHON_VERSION[1]} 或更高版本")
        return False
    return True


def check_package(import_name):
    """检查包是否已安装"""
    return importlib.util.find_spec(import_name) is not None


def install_package(pip_name):
    """安装包"""
    _say(f"  正在安装 {pip_name}...")
    try:
        subprocess.check_call(
            [sys.executable, "-m", "pip", "install", pip_name, "-q"],
            stdout=subprocess.DEVNULL,
            stderr=subprocess.DEVNULL
        )
        return True
    except subprocess.CalledProcessError:
        return False


def check_and_install_dependencies():
    """检查并安装依赖，全部就绪时不输出任何内容"""
    missing = [(i, p) for i, p in REQUIRED_PACKAGES if not check_package(i)]
    if not missing:
        return True

    _say("安装缺失的依赖...")
    for import_name, pip_name in missing:
        if install_package(pip_name):
            _say(f"  ✓ {pip_name} 安装成功")
        else:
            _say(f"  ✗ {pip_name} 安装失败")
            return False
    return True


def main():
    """主入口"""
    if not check_python_version():
        sys.exit(1)

    if not check_and_install_dependencies():
        _say("\n❌ 依赖安装失败，请手动安装：")
        _say("   pip install -r requirements.txt")
        sys.exit(1)

    src_dir = Path(__file__).parent / "src"
    if not src_dir.exists():
        _say("❌ src 目录不存在")
        sys.exit(1)
    sys.path.insert(0, str(src_dir))

    try:
        from cli import main as cli_main
    except ImportError as e:
        _say(f"\n❌ 导入错误: {e}")
        _say("请确保所有文件完整")
        sys.exit(1)

    try:
        sys.exit(cli_main(sys.argv[1:]))
    except KeyboardInterrupt:
        _say("\n已中断")
        sys.exit(130)


if __name__ == "__main__":
    main()
