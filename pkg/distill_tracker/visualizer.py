"""
可视化模块
损失曲线、轨迹和消融结果的matplotlib图, 统一保存为PNG
"""

import matplotlib

matplotlib.use('Agg')

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np
import pandas as pd
from loguru import logger


class TrackingVisualizer:
    """跟踪与蒸馏结果可视化类"""

    def __init__(self, figsize=(10, 6), dpi=100):
        """
        参数:
            figsize: 图像尺寸 (英寸)
            dpi: 保存分辨率
        """
        self.figsize = figsize
        self.dpi = dpi
        self.cmap = plt.get_cmap('tab20')

    def _save(self, fig, path):
        fig.tight_layout()
        fig.savefig(path, dpi=self.dpi)
        plt.close(fig)
        logger.info("图像已保存: {}", path)
        return path

    def plot_loss_curve(self, curve, path, smooth=20):
        """
        绘制训练损失曲线

        参数:
            curve: LossRecord 列表或含 iteration/cls/box/emb/total 列的 DataFrame
            path: 输出PNG路径
            smooth: 滑动平均窗口, 1为不平滑
        """
        table = curve if isinstance(curve, pd.DataFrame) else pd.DataFrame([vars(r) for r in curve])
        fig, ax = plt.subplots(figsize=self.figsize)
        for column, label in (('total', '总损失'), ('cls', '分类'), ('box', '框回归'), ('emb', '嵌入')):
            values = table[column].rolling(max(1, smooth), min_periods=1).mean()
            ax.plot(table['iteration'], values, label=label)
        ax.set_yscale('log')
        ax.set_xlabel('迭代')
        ax.set_ylabel('损失')
        ax.set_title('玩具学生头训练曲线')
        ax.grid(linestyle='--', alpha=0.7)
        ax.legend()
        return self._save(fig, path)

    def plot_tracks(self, frames, path, image_size=None):
        """
        绘制每条轨迹的框中心路径

        参数:
            frames: {帧号: [(track_id, Box, ...)]}
            path: 输出PNG路径
            image_size: 可选 (宽, 高), 设置坐标范围
        """
        paths = {}
        for frame in sorted(frames):
            for entry in frames[frame]:
                paths.setdefault(entry[0], []).append(entry[1].center)

        fig, ax = plt.subplots(figsize=self.figsize)
        for k, (track_id, centers) in enumerate(sorted(paths.items())):
            xy = np.array(centers)
            color = self.cmap(k % self.cmap.N)
            ax.plot(xy[:, 0], xy[:, 1], color=color, linewidth=1.2)
            ax.text(xy[0, 0], xy[0, 1], str(track_id), color=color, fontsize=8)
        if image_size is not None:
            ax.set_xlim(0, image_size[0])
            ax.set_ylim(0, image_size[1])
        # 图像坐标系 y 轴向下
        ax.invert_yaxis()
        ax.set_xlabel('x (像素)')
        ax.set_ylabel('y (像素)')
        ax.set_title(f'轨迹 ({len(paths)} 条)')
        return self._save(fig, path)

    def plot_ablation(self, table, by, metrics, path):
        """
        绘制消融结果条形图, 每个指标一个子图, 多个种子取平均

        参数:
            table: 消融结果 DataFrame
            by: 参数列名
            metrics: 指标列名列表
            path: 输出PNG路径
        """
        metrics = list(metrics)
        grouped = table.groupby(by, sort=False)[metrics].mean()
        fig, axes = plt.subplots(1, len(metrics), figsize=self.figsize, squeeze=False)
        labels = [str(v) for v in grouped.index]
        for ax, metric in zip(axes[0], metrics):
            values = grouped[metric].to_numpy()
            bars = ax.bar(range(len(values)), values, color='#4a86e8')
            for bar, v in zip(bars, values):
                ax.text(bar.get_x() + bar.get_width() / 2, v, f'{v:.3g}', ha='center', va='bottom')
            ax.set_xticks(range(len(values)))
            ax.set_xticklabels(labels)
            ax.set_xlabel(by)
            ax.set_title(metric)
            ax.grid(axis='y', linestyle='--', alpha=0.7)
        return self._save(fig, path)


def read_loss_curve(path):
    """读取 JSON lines 格式的损失曲线"""
    return pd.read_json(path, lines=True)
